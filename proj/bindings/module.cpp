#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "shiftforge/config.hpp"
#include "shiftforge/data.hpp"
#include "shiftforge/metrics.hpp"
#include "shiftforge/packed.hpp"
#include "shiftforge/quantize.hpp"
#include "shiftforge/regularize.hpp"
#include "shiftforge/train.hpp"

namespace py = pybind11;
using namespace shiftforge;

namespace {

Tensor tensor_from_array(py::array_t<float, py::array::c_style | py::array::forcecast> arr) {
    std::vector<int> shape(arr.ndim());
    for (py::ssize_t i = 0; i < arr.ndim(); ++i) shape[static_cast<size_t>(i)] = static_cast<int>(arr.shape(i));
    std::vector<float> values(arr.data(), arr.data() + arr.size());
    return Tensor::from_vector(values, shape);
}

py::array_t<float> array_from_tensor(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<float> arr(shape);
    std::copy(t.values().begin(), t.values().end(), arr.mutable_data());
    return arr;
}

SteConfig ste_of(float clip) {
    SteConfig cfg;
    cfg.clip_range = clip;
    return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "shiftforge: S3 re-parameterized low-bit shift network toolkit";

    py::register_exception<Error>(m, "ShiftforgeError");

    // quantizers
    m.def(
        "heaviside_ste",
        [](py::array_t<float, py::array::c_style | py::array::forcecast> x, float clip) {
            return array_from_tensor(heaviside_ste(tensor_from_array(x), ste_of(clip)));
        },
        py::arg("x"), py::arg("clip") = 1.0f, "1(x > 0) elementwise");
    m.def(
        "staircase_quantize",
        [](py::array_t<float, py::array::c_style | py::array::forcecast> w,
           std::vector<float> thresholds, std::vector<float> values) {
            QuantSpec spec{std::move(thresholds), std::move(values)};
            return array_from_tensor(staircase_quantize(tensor_from_array(w), spec));
        },
        py::arg("w"), py::arg("thresholds"), py::arg("values"));
    m.def(
        "ternary_quantize",
        [](py::array_t<float, py::array::c_style | py::array::forcecast> w, float delta) {
            return array_from_tensor(ternary_quantize(tensor_from_array(w), delta));
        },
        py::arg("w"), py::arg("delta"));
    m.def(
        "ternary_auto_delta",
        [](py::array_t<float, py::array::c_style | py::array::forcecast> w) {
            return ternary_auto_delta(tensor_from_array(w));
        },
        py::arg("w"), "0.7 * mean(|w|)");
    m.def(
        "deepshift_quantize",
        [](py::array_t<float, py::array::c_style | py::array::forcecast> w, int p_min, int p_max) {
            return array_from_tensor(deepshift_quantize(tensor_from_array(w), p_min, p_max));
        },
        py::arg("w"), py::arg("p_min"), py::arg("p_max"));
    m.def(
        "s3_project",
        [](py::array_t<float, py::array::c_style | py::array::forcecast> w_sign,
           py::array_t<float, py::array::c_style | py::array::forcecast> w_sparse,
           std::vector<py::array_t<float, py::array::c_style | py::array::forcecast>> shift_latents,
           float clip) {
            S3Weight s3;
            s3.w_sign = tensor_from_array(w_sign);
            s3.w_sparse = tensor_from_array(w_sparse);
            for (auto& a : shift_latents) s3.shift_latents.push_back(tensor_from_array(a));
            Tensor out = s3.shift_latents.empty() ? s3_project_ternary(s3, ste_of(clip))
                                                  : s3_project_shift(s3, ste_of(clip));
            return array_from_tensor(out);
        },
        py::arg("w_sign"), py::arg("w_sparse"),
        py::arg("shift_latents") = std::vector<py::array_t<float, py::array::c_style | py::array::forcecast>>{},
        py::arg("clip") = 1.0f,
        "sign-sparse-shift projection; ternary when shift_latents is empty");

    // regularizer & schedules
    m.def(
        "dense_weight_penalty",
        [](py::array_t<float, py::array::c_style | py::array::forcecast> w) {
            return dense_weight_penalty(tensor_from_array(w)).item();
        },
        py::arg("w_sparse"), "sum(max(-w, 0))");
    m.def(
        "alpha_at",
        [](float alpha, const std::string& decay, int epoch, int total_epochs) {
            RegularizerConfig rc;
            rc.alpha = alpha;
            rc.alpha_decay = alpha_decay_from_string(decay);
            return alpha_at(rc, epoch, total_epochs);
        },
        py::arg("alpha"), py::arg("decay"), py::arg("epoch"), py::arg("total_epochs"));
    m.def(
        "lr_at",
        [](float initial_lr, const std::string& kind, int epoch, int total_epochs) {
            LrSchedule s;
            s.initial_lr = initial_lr;
            s.total_epochs = total_epochs;
            s.kind = lr_kind_from_string(kind);
            return lr_at(s, epoch);
        },
        py::arg("initial_lr"), py::arg("kind"), py::arg("epoch"), py::arg("total_epochs"));

    // packing
    m.def(
        "pack",
        [](py::array_t<float, py::array::c_style | py::array::forcecast> w) {
            PackedShiftTensor p = pack_tensor(tensor_from_array(w), "w");
            return py::bytes(reinterpret_cast<const char*>(p.payload.data()), p.payload.size());
        },
        py::arg("w"), "3-bit payload bytes for weights in {0,+-1,+-2,+-4}");
    m.def(
        "unpack",
        [](py::bytes payload, std::vector<int> shape) {
            PackedShiftTensor p;
            p.shape = std::move(shape);
            std::string s = payload;
            p.payload.assign(s.begin(), s.end());
            if (p.payload.size() != PackedShiftTensor::payload_bytes(p.count()))
                throw PackError("payload size does not match shape");
            return array_from_tensor(unpack_tensor(p));
        },
        py::arg("payload"), py::arg("shape"));
    m.def(
        "shift_matmul",
        [](py::array_t<int32_t, py::array::c_style | py::array::forcecast> x,
           py::array_t<float, py::array::c_style | py::array::forcecast> w, int frac_bits) {
            if (x.ndim() != 2) throw ShapeError("x must be 2-d");
            FixedPointActivation fx;
            fx.shape = {static_cast<int>(x.shape(0)), static_cast<int>(x.shape(1))};
            fx.values.assign(x.data(), x.data() + x.size());
            fx.frac_bits = frac_bits;
            PackedShiftTensor pw = pack_tensor(tensor_from_array(w), "w");
            FixedPointActivation out = shift_matmul(fx, pw);
            py::array_t<int32_t> arr({out.shape[0], out.shape[1]});
            std::copy(out.values.begin(), out.values.end(), arr.mutable_data());
            return arr;
        },
        py::arg("x"), py::arg("w"), py::arg("frac_bits") = 0,
        "integer matmul computed with shifts and sign flips only");

    // metrics
    m.def(
        "wsvr",
        [](py::array_t<float, py::array::c_style | py::array::forcecast> prev,
           py::array_t<float, py::array::c_style | py::array::forcecast> next) {
            return wsvr_tensors(tensor_from_array(prev), tensor_from_array(next));
        },
        py::arg("prev"), py::arg("next"));
    m.def(
        "wlvr",
        [](py::array_t<float, py::array::c_style | py::array::forcecast> w, bool discrete,
           float tau) {
            Tensor t = tensor_from_array(w);
            return discrete ? wlvr_discrete(t) : wlvr_continuous(t, tau);
        },
        py::arg("w"), py::arg("discrete") = true, py::arg("tau") = 0.02f);
    m.def("spearman", &spearman, py::arg("xs"), py::arg("ys"));

    // data + training entry points
    m.def("write_synthetic_mnist", &write_synthetic_mnist, py::arg("dir"), py::arg("train_n"),
          py::arg("test_n"), py::arg("seed") = 1);
    m.def("write_synthetic_cifar", &write_synthetic_cifar, py::arg("dir"), py::arg("train_n"),
          py::arg("test_n"), py::arg("seed") = 1);
    m.def(
        "train",
        [](const std::map<std::string, std::string>& options) {
            ExperimentConfig cfg;
            for (const auto& [k, v] : options) cfg.set_key(k, v);
            cfg.validate();
            TrainResult tr = train(cfg);
            py::dict out;
            out["final_train_loss"] = tr.log.final().train_loss;
            out["final_top1"] = tr.log.final().test_top1;
            out["final_top5"] = tr.log.final().test_top5;
            out["wall_seconds"] = tr.log.wall_seconds;
            out["run_dir"] = tr.run_dir;
            out["checkpoint"] = tr.checkpoint_path;
            return out;
        },
        py::arg("options"), "run a training job from a {key: value} option dict");
}
