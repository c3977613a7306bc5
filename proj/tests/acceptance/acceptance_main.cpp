// Acceptance suite: one pass/fail line per criterion, exit code = number of
// failures. Heavy criteria (5-8) train real models; point it at real datasets
// through SHIFTFORGE_DATA, otherwise it generates the bundled procedural
// stand-in corpora in ./accept_work/data and says so.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "shiftforge/config.hpp"
#include "shiftforge/data.hpp"
#include "shiftforge/metrics.hpp"
#include "shiftforge/ops.hpp"
#include "shiftforge/packed.hpp"
#include "shiftforge/quantize.hpp"
#include "shiftforge/regularize.hpp"
#include "shiftforge/train.hpp"

using namespace shiftforge;
namespace fs = std::filesystem;

namespace {

struct Timer {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
};

int g_failures = 0;

void report(int criterion, bool pass, const std::string& detail) {
    std::cout << (pass ? "[PASS]" : "[FAIL]") << " criterion " << criterion << ": " << detail
              << std::endl;
    if (!pass) ++g_failures;
}

fs::path work_dir() {
    fs::path p = fs::current_path() / "accept_work";
    fs::create_directories(p);
    return p;
}

// ---- datasets: real when provided, stand-in otherwise ----

std::string mnist_dir() {
    static std::string dir = [] {
        const char* root = std::getenv("SHIFTFORGE_DATA");
        if (root) {
            std::string real = (fs::path(root) / "mnist").string();
            if (dataset_present(DatasetKind::Mnist, real)) {
                std::cout << "  [data] using MNIST files from " << real << std::endl;
                return real;
            }
        }
        std::string synth = (work_dir() / "data" / "mnist").string();
        if (!dataset_present(DatasetKind::Mnist, synth)) {
            std::cout << "  [data] MNIST not found; generating the procedural digit stand-in at "
                      << synth << std::endl;
            write_synthetic_mnist(synth, 10000, 2000, 42);
        } else {
            std::cout << "  [data] using stand-in digit corpus at " << synth << std::endl;
        }
        return synth;
    }();
    return dir;
}

std::string cifar_dir() {
    static std::string dir = [] {
        const char* root = std::getenv("SHIFTFORGE_DATA");
        if (root) {
            std::string real = (fs::path(root) / "cifar10").string();
            if (dataset_present(DatasetKind::Cifar10, real)) {
                std::cout << "  [data] using CIFAR-10 files from " << real << std::endl;
                return real;
            }
        }
        std::string synth = (work_dir() / "data" / "cifar10").string();
        if (!dataset_present(DatasetKind::Cifar10, synth)) {
            std::cout << "  [data] CIFAR-10 not found; generating the colour-shape stand-in at "
                      << synth << std::endl;
            write_synthetic_cifar(synth, 5000, 1000, 42);
        } else {
            std::cout << "  [data] using stand-in shape corpus at " << synth << std::endl;
        }
        return synth;
    }();
    return dir;
}

// shared run cache for criteria 5 / 7 / 8
std::map<std::string, RunLog> g_runs;

ExperimentConfig mnist_run_config(const std::string& mode, float alpha, uint64_t seed) {
    ExperimentConfig cfg;
    cfg.model = "cnn_mnist";
    cfg.mode = mode;
    cfg.t = 2;
    cfg.dataset = "mnist";
    cfg.data_dir = mnist_dir();
    cfg.epochs = 10;
    cfg.batch_size = 128;
    // identical optimizer settings across modes; only the latent group of the
    // quantized arms runs at a hotter rate (no such group exists for fp32)
    cfg.lr = 0.1f;
    cfg.latent_lr_scale = 10.0f;
    cfg.lr_schedule = "cosine";
    cfg.momentum = 0.9f;
    cfg.lambda = 1e-4f;
    cfg.alpha = alpha;
    cfg.alpha_decay = "none";
    cfg.seed = seed;
    cfg.snapshot_every = 10;
    cfg.threads = 2;
    std::ostringstream name;
    name << mode << "_a" << alpha << "_s" << seed;
    cfg.out_dir = (work_dir() / "mnist_runs" / name.str()).string();
    return cfg;
}

const RunLog& mnist_run(const std::string& mode, float alpha, uint64_t seed) {
    std::ostringstream key;
    key << mode << '|' << alpha << '|' << seed;
    auto it = g_runs.find(key.str());
    if (it != g_runs.end()) return it->second;
    ExperimentConfig cfg = mnist_run_config(mode, alpha, seed);
    std::cout << "  [run] " << cfg.model << " " << cfg.mode << " alpha=" << alpha
              << " seed=" << seed << " ..." << std::flush;
    TrainResult tr = train(cfg);
    std::cout << " top-1 " << tr.log.final().test_top1 << "% in " << tr.log.wall_seconds << "s"
              << std::endl;
    return g_runs.emplace(key.str(), tr.log).first->second;
}

double median3(double a, double b, double c) {
    std::vector<double> v{a, b, c};
    std::sort(v.begin(), v.end());
    return v[1];
}

// ---- criterion 1 ----
void criterion_1() {
    Timer t;
    Rng rng(101);
    QuantSpec spec;
    spec.thresholds = {-1.25f, -0.3f, 0.0f, 0.45f, 1.1f};
    spec.values = {-4, -2, -1, 1, 2, 4};
    auto oracle = [&](float w) {
        for (size_t i = 0; i < spec.thresholds.size(); ++i)
            if (w < spec.thresholds[i]) return spec.values[i];
        return spec.values.back();
    };
    const size_t n = 100000;
    Tensor w = Tensor::uniform({static_cast<int>(n)}, -2.0f, 2.0f, rng);
    for (size_t i = 0; i < n; i += 1000)  // exact threshold hits
        w.at(i) = spec.thresholds[(i / 1000) % spec.thresholds.size()];
    Tensor out = staircase_quantize(w, spec);
    size_t mismatches = 0;
    for (size_t i = 0; i < n; ++i)
        if (out.at(i) != oracle(w.at(i))) ++mismatches;

    // ternary boundary convention at +-delta
    Tensor b = Tensor::from_vector({0.3f, -0.3f}, {2});
    Tensor tq = ternary_quantize(b, 0.3f);
    bool boundary_ok = tq.at(0) == 1.0f && tq.at(1) == 0.0f;

    double secs = t.seconds();
    std::ostringstream d;
    d << "staircase oracle equivalence: " << mismatches << "/" << n
      << " mismatches, ternary +-delta convention " << (boundary_ok ? "honored" : "VIOLATED")
      << ", " << secs << "s (limit 1s)";
    report(1, mismatches == 0 && boundary_ok && secs < 1.0, d.str());
}

// ---- criterion 2 ----
void criterion_2() {
    std::set<float> seen;
    for (int bits = 0; bits < 16; ++bits) {
        S3Weight s3;
        s3.w_sparse = Tensor::from_vector({(bits & 1) ? 0.6f : -0.6f}, {1});
        s3.w_sign = Tensor::from_vector({(bits & 2) ? 0.6f : -0.6f}, {1});
        s3.shift_latents = {Tensor::from_vector({(bits & 4) ? 0.6f : -0.6f}, {1}),
                            Tensor::from_vector({(bits & 8) ? 0.6f : -0.6f}, {1})};
        seen.insert(s3_project_shift(s3).item());
    }
    std::set<float> expected{0, 1, -1, 2, -2, 4, -4};
    bool exhaustive = seen == expected;

    // t = 1 with the shift latent non-positive reduces to the ternary form
    bool ternary_ok = true;
    for (int bits = 0; bits < 4; ++bits) {
        S3Weight s3;
        s3.w_sparse = Tensor::from_vector({(bits & 1) ? 0.6f : -0.6f}, {1});
        s3.w_sign = Tensor::from_vector({(bits & 2) ? 0.6f : -0.6f}, {1});
        s3.shift_latents = {Tensor::from_vector({-0.6f}, {1})};
        float shift_v = s3_project_shift(s3).item();
        S3Weight tp{s3.w_sign, s3.w_sparse, {}};
        float ter_v = s3_project_ternary(tp).item();
        if (shift_v != ter_v || std::fabs(shift_v) > 1.0f) ternary_ok = false;
    }
    std::ostringstream d;
    d << "2^4 sign patterns project onto exactly {0,+-1,+-2,+-4}: " << (exhaustive ? "yes" : "NO")
      << "; t=1 reduction to ternary codomain: " << (ternary_ok ? "yes" : "NO");
    report(2, exhaustive && ternary_ok, d.str());
}

// ---- criterion 3 ----
struct FdResult {
    double worst_per_op = 0.0;
    std::string worst_name = "";
};

double fd_loss(const std::function<Tensor()>& f) {
    NoGradGuard ng;
    return static_cast<double>(f().item());
}

// max over coords of |ad-fd| / (atol + rtol*|fd|); < 1 passes. The absolute
// floor scales with the loss magnitude: that is the intrinsic float32 noise
// of a central difference at h=1e-3.
double grad_err(const std::function<Tensor()>& make_loss, Tensor& leaf, double rtol, double atol,
                size_t max_coords = 48) {
    leaf.zero_grad();
    Tensor loss = make_loss();
    backward(loss);
    atol *= std::max(1.0, std::fabs(static_cast<double>(loss.item())));
    double worst = 0.0;
    size_t n = leaf.numel();
    size_t step = n > max_coords ? n / max_coords : 1;
    for (size_t i = 0; i < n; i += step) {
        float orig = leaf.at(i);
        const float h = 1e-3f;
        leaf.at(i) = orig + h;
        double fp = fd_loss(make_loss);
        leaf.at(i) = orig - h;
        double fm = fd_loss(make_loss);
        leaf.at(i) = orig;
        double fd = (fp - fm) / (2.0 * h);
        double ad = leaf.has_grad() ? static_cast<double>(leaf.grad_values()[i]) : 0.0;
        worst = std::max(worst, std::fabs(ad - fd) / (atol + rtol * std::fabs(fd)));
    }
    return worst;
}

void criterion_3() {
    Timer t;
    Rng rng(301);
    FdResult res;
    auto track = [&](const std::string& name, double err) {
        if (err > res.worst_per_op) {
            res.worst_per_op = err;
            res.worst_name = name;
        }
    };

    {  // per-op checks at rtol 1e-3 (atol 1e-4 absorbs the float32 FD noise floor)
        Tensor a = Tensor::uniform({4, 3}, -2.0f, 2.0f, rng, true);
        Tensor b = Tensor::uniform({3, 5}, -2.0f, 2.0f, rng, true);
        Tensor m = Tensor::uniform({4, 5}, -1.0f, 1.0f, rng);
        auto matmul_loss = [&] { return sum(mul(matmul(a, b), m)); };
        track("matmul/a", grad_err(matmul_loss, a, 1e-3, 1e-4));
        track("matmul/b", grad_err(matmul_loss, b, 1e-3, 1e-4));

        Tensor x = Tensor::uniform({2, 2, 6, 6}, -1.5f, 1.5f, rng, true);
        Tensor w = Tensor::uniform({3, 2, 3, 3}, -1.0f, 1.0f, rng, true);
        Tensor cm = Tensor::uniform({2, 3, 6, 6}, -1.0f, 1.0f, rng);
        auto conv_loss = [&] { return sum(mul(conv2d(x, w, 1, 1), cm)); };
        track("conv2d/x", grad_err(conv_loss, x, 1e-3, 1e-4));
        track("conv2d/w", grad_err(conv_loss, w, 1e-3, 1e-4));

        Tensor pm = Tensor::uniform({2, 2, 3, 3}, -1.0f, 1.0f, rng);
        auto pool_loss = [&] { return sum(mul(maxpool2d(x, 2, 2), pm)); };
        track("maxpool", grad_err(pool_loss, x, 1e-3, 1e-4));

        Tensor gamma = Tensor::uniform({2}, 0.5f, 1.5f, rng, true);
        Tensor beta = Tensor::uniform({2}, -0.5f, 0.5f, rng, true);
        auto bn_loss = [&] {
            Tensor rm = Tensor::zeros({2});
            Tensor rv = Tensor::full({2}, 1.0f);
            return sum(mul(batchnorm(x, gamma, beta, rm, rv, true), cm.defined() ? Tensor::uniform({2, 2, 6, 6}, -1.0f, 1.0f, rng) : x));
        };
        // fixed mask: regenerate loss closure with one mask
        Tensor bnm = Tensor::uniform({2, 2, 6, 6}, -1.0f, 1.0f, rng);
        auto bn_loss2 = [&] {
            Tensor rm = Tensor::zeros({2});
            Tensor rv = Tensor::full({2}, 1.0f);
            return sum(mul(batchnorm(x, gamma, beta, rm, rv, true), bnm));
        };
        track("batchnorm/x", grad_err(bn_loss2, x, 1e-3, 3e-4));
        track("batchnorm/gamma", grad_err(bn_loss2, gamma, 1e-3, 1e-4));
        (void)bn_loss;

        Tensor logits = Tensor::uniform({6, 10}, -2.0f, 2.0f, rng, true);
        std::vector<int> labels{0, 3, 9, 5, 2, 7};
        auto ce_loss = [&] { return cross_entropy(logits, labels); };
        track("cross_entropy", grad_err(ce_loss, logits, 1e-3, 1e-4));

        Tensor e = Tensor::uniform({24}, 0.1f, 1.8f, rng, true);
        auto elem_loss = [&] { return add(sum(mul(relu(e), exp2_elem(e))), sum_squares(e)); };
        track("elementwise", grad_err(elem_loss, e, 1e-3, 1e-4));

        Tensor ws = Tensor::uniform({32}, -2.0f, 2.0f, rng, true);
        for (float& v : ws.values())
            if (std::fabs(v) < 0.05f) v = 0.1f;
        auto pen_loss = [&] { return dense_weight_penalty(ws); };
        track("dense_weight_penalty", grad_err(pen_loss, ws, 1e-3, 1e-4));

        // STE surrogates of every quantizer
        SteSurrogateGuard guard;
        Tensor q = Tensor::uniform({24}, -0.9f, 0.9f, rng, true);
        for (float& v : q.values()) {
            float a2 = std::clamp(std::fabs(v), 0.08f, 0.9f);
            v = v >= 0 ? a2 : -a2;
        }
        Tensor qm = Tensor::uniform({24}, -1.0f, 1.0f, rng);
        auto hv_loss = [&] { return sum(mul(heaviside_ste(q, {1.0f}), qm)); };
        track("heaviside_ste", grad_err(hv_loss, q, 1e-3, 1e-4));
        auto ter_loss = [&] { return sum(mul(ternary_quantize(q, 0.5f, {1.0f}), qm)); };
        track("ternary_ste", grad_err(ter_loss, q, 1e-3, 1e-4));
        auto ds_loss = [&] { return sum(mul(deepshift_quantize(q, -2, 2, {1.0f}), qm)); };
        track("deepshift_ste", grad_err(ds_loss, q, 1e-3, 1e-4));
    }
    bool per_op_ok = res.worst_per_op < 1.0;

    // end-to-end: full composite loss of an s3_shift cnn in surrogate mode
    double e2e_worst = 0.0;
    {
        Rng mrng(302);
        ModelSpec spec;
        spec.arch = Architecture::CnnMnist;
        spec.mode = WeightMode::S3Shift;
        auto model = build_model(spec, mrng);
        // keep all latents clear of heaviside thresholds and the clip edges
        for (WeightLayer* l : model->weight_layers()) {
            if (!l->quantized()) continue;
            auto nudge = [](Tensor& tn) {
                for (float& v : tn.values()) {
                    float a = std::clamp(std::fabs(v), 0.08f, 0.9f);
                    v = v >= 0 ? a : -a;
                }
            };
            nudge(l->s3.w_sign);
            nudge(l->s3.w_sparse);
            for (Tensor& sl : l->s3.shift_latents) nudge(sl);
        }
        Tensor x = Tensor::uniform({4, 1, 28, 28}, -1.0f, 1.0f, mrng);
        std::vector<int> labels{1, 4, 7, 9};
        RegularizerConfig reg;
        reg.alpha = 1e-2f;
        reg.lambda = 1e-3f;
        auto make_loss = [&]() -> Tensor {
            std::vector<Tensor> latents, sparse;
            for (const ParamInfo& p : model->parameters()) {
                latents.push_back(p.tensor);
                if (p.is_w_sparse) sparse.push_back(p.tensor);
            }
            Tensor task = cross_entropy(model->forward(x, true), labels);
            return total_loss(task, latents, sparse, reg, 0, 10);
        };
        SteSurrogateGuard guard;
        Rng pick(303);
        auto params = model->parameters();
        int checked = 0;
        model->zero_grad();
        Tensor loss = make_loss();
        backward(loss);
        double e2e_atol = 1e-3 * std::max(1.0, std::fabs(static_cast<double>(loss.item())));
        while (checked < 20) {
            ParamInfo& p = params[pick.index(params.size())];
            if (p.name.find("bn") != std::string::npos) continue;  // sample weight latents
            size_t i = pick.index(p.tensor.numel());
            float orig = p.tensor.at(i);
            const float h = 1e-3f;
            p.tensor.at(i) = orig + h;
            double fp = fd_loss(make_loss);
            p.tensor.at(i) = orig - h;
            double fm = fd_loss(make_loss);
            p.tensor.at(i) = orig;
            double fd = (fp - fm) / (2.0 * h);
            double ad = p.tensor.has_grad() ? static_cast<double>(p.tensor.grad_values()[i]) : 0.0;
            e2e_worst = std::max(e2e_worst, std::fabs(ad - fd) / (e2e_atol + 1e-2 * std::fabs(fd)));
            ++checked;
        }
    }
    bool e2e_ok = e2e_worst < 1.0;
    double secs = t.seconds();
    std::ostringstream d;
    d << "per-op gradcheck worst scaled err " << res.worst_per_op << " (" << res.worst_name
      << ", tol rtol=1e-3) ; end-to-end 20 latents worst " << e2e_worst << " (rtol=1e-2); " << secs
      << "s (limit 60s)";
    report(3, per_op_ok && e2e_ok && secs < 60.0, d.str());
}

// ---- criterion 4 ----
void criterion_4() {
    Timer t;
    Rng rng(401);
    const float vals[7] = {0, 1, -1, 2, -2, 4, -4};
    size_t mismatches = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        int m = 1 + static_cast<int>(rng.index(6));
        int k = 1 + static_cast<int>(rng.index(16));
        int n = 1 + static_cast<int>(rng.index(6));
        FixedPointActivation x;
        x.shape = {m, k};
        x.frac_bits = 12;
        for (int i = 0; i < m * k; ++i)
            x.values.push_back(static_cast<int32_t>(rng.index(2000001)) - 1000000);
        Tensor wf = Tensor::zeros({k, n});
        for (size_t i = 0; i < wf.numel(); ++i) wf.at(i) = vals[rng.index(7)];
        FixedPointActivation out = shift_matmul(x, pack_tensor(wf, "w"));
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) {
                int64_t acc = 0;
                for (int kk = 0; kk < k; ++kk)
                    acc += static_cast<int64_t>(x.values[static_cast<size_t>(i * k + kk)]) *
                           static_cast<int64_t>(wf.at(static_cast<size_t>(kk * n + j)));
                if (out.values[static_cast<size_t>(i * n + j)] != acc) ++mismatches;
            }
    }

    // packed model op tally: zero multiplies in packed layers
    Rng mrng(402);
    ModelSpec spec;
    spec.arch = Architecture::CnnMnist;
    spec.mode = WeightMode::S3Shift;
    auto model = build_model(spec, mrng);
    PackedModel pm = export_packed(*model);
    uint64_t packed_multiplies = 0;
    size_t packed_layers = 0;
    for (const auto& row : count_ops(pm, {1, 1, 28, 28})) {
        if (row.packed) {
            packed_multiplies += row.ops.multiplies;
            ++packed_layers;
        }
    }
    double secs = t.seconds();
    std::ostringstream d;
    d << "1000 random shift_matmul instances vs integer oracle: " << mismatches
      << " mismatches; packed layers (" << packed_layers << ") multiplies " << packed_multiplies
      << "; " << secs << "s (limit 60s)";
    report(4, mismatches == 0 && packed_multiplies == 0 && packed_layers > 0 && secs < 60.0,
           d.str());
}

// ---- criterion 5 ----
void criterion_5() {
    Timer t;
    double fp[3], s3[3];
    for (uint64_t seed = 1; seed <= 3; ++seed) {
        fp[seed - 1] = mnist_run("fp32", 1e-5f, seed).final().test_top1;
        s3[seed - 1] = mnist_run("s3_shift", 1e-5f, seed).final().test_top1;
    }
    double fp_med = median3(fp[0], fp[1], fp[2]);
    double s3_med = median3(s3[0], s3[1], s3[2]);
    double gap = fp_med - s3_med;
    double secs = t.seconds();
    std::ostringstream d;
    d << "3-seed median top-1: fp32 " << fp_med << "%, s3_shift(t=2) " << s3_med << "% (gap "
      << gap << " pts, limit 2.0; absolute floor 97.0); " << secs << "s (limit 1800s)";
    report(5, gap <= 2.0 && s3_med >= 97.0 && secs <= 1800.0, d.str());
}

// ---- criterion 6 ----
struct DynamicsOutcome {
    double wsvr_final_two_thirds = 0.0;
    double wlvr_spearman = 0.0;
};

DynamicsOutcome dynamics_of(const DynamicsRecord& rec,
                            const std::map<std::string, bool>& discrete) {
    DynamicsOutcome out;
    double wsum = 0.0;
    size_t wcount = 0;
    double ssum = 0.0;
    size_t scount = 0;
    std::vector<double> epochs_d(rec.epochs.begin(), rec.epochs.end());
    for (const std::string& l : rec.layers) {
        if (discrete.count(l) && !discrete.at(l)) continue;  // fp32 first layer excluded
        const auto& ws = rec.wsvr_series.at(l);
        size_t start = ws.size() / 3;  // final two-thirds of the transitions
        for (size_t i = start; i < ws.size(); ++i) {
            wsum += ws[i];
            ++wcount;
        }
        ssum += spearman(epochs_d, rec.wlvr_series.at(l));
        ++scount;
    }
    out.wsvr_final_two_thirds = wcount ? wsum / static_cast<double>(wcount) : 0.0;
    out.wlvr_spearman = scount ? ssum / static_cast<double>(scount) : 0.0;
    return out;
}

void criterion_6() {
    Timer t;
    auto config_for = [&](const std::string& mode) {
        ExperimentConfig cfg;
        cfg.model = "resnet20_cifar";
        cfg.mode = mode;
        cfg.dataset = "cifar10_subset(5000)";
        cfg.data_dir = cifar_dir();
        cfg.epochs = 30;
        cfg.batch_size = 128;
        cfg.lr = 0.1f;
        cfg.lr_schedule = "cosine";
        cfg.momentum = 0.9f;
        // both arms share the optimizer settings: latent switches run 20x the
        // base rate, l2 stays off the latents, and the classifier stays fp32
        cfg.latent_lr_scale = 20.0f;
        cfg.l2_scope = "fp_layers";
        cfg.quantize_last = false;
        cfg.lambda = 1e-4f;
        cfg.alpha = 1e-5f;
        cfg.seed = 1;
        cfg.snapshot_every = 1;
        cfg.threads = 1;  // the two runs share the machine
        cfg.out_dir = (work_dir() / "dynamics" / mode).string();
        return cfg;
    };

    TrainResult s3_res, tq_res;
    std::map<std::string, bool> s3_disc, tq_disc;
    std::exception_ptr err_a = nullptr, err_b = nullptr;
    std::cout << "  [run] resnet20 s3_ternary and ternary_quantizer, 30 epochs each, in parallel"
              << std::endl;
    std::thread ta([&] {
        try {
            s3_res = train(config_for("s3_ternary"));
        } catch (...) {
            err_a = std::current_exception();
        }
    });
    std::thread tb([&] {
        try {
            tq_res = train(config_for("ternary_quantizer"));
        } catch (...) {
            err_b = std::current_exception();
        }
    });
    ta.join();
    tb.join();
    if (err_a) std::rethrow_exception(err_a);
    if (err_b) std::rethrow_exception(err_b);

    // discreteness map: everything but the fp32 first layer counts
    {
        Rng r(1);
        ModelSpec ms;
        ms.arch = Architecture::ResNet20Cifar;
        ms.mode = WeightMode::S3Ternary;
        auto m = build_model(ms, r);
        for (WeightLayer* l : m->weight_layers()) {
            s3_disc[l->name] = l->quantized();
            tq_disc[l->name] = l->quantized();
        }
    }
    DynamicsOutcome s3o = dynamics_of(s3_res.dynamics, s3_disc);
    DynamicsOutcome tqo = dynamics_of(tq_res.dynamics, tq_disc);
    double secs = t.seconds();

    // informational: the quantizer-trained latents should settle into two
    // modes straddling zero (thresholds trap weights on both sides)
    try {
        std::map<std::string, Tensor> tensors;
        load_named_tensors(
            (work_dir() / "dynamics" / "ternary_quantizer" / "snapshots" / "epoch_30.sft").string(),
            tensors);
        Histogram h = weight_histogram(tensors.at("latent.s2b2.conv1"), 41);
        int below = 0, above = 0;
        for (int b : histogram_peaks(h)) {
            if (h.bin_centers[static_cast<size_t>(b)] < 0) ++below;
            if (h.bin_centers[static_cast<size_t>(b)] > 0) ++above;
        }
        std::cout << "  [info] quantizer-trained latent histogram (s2b2.conv1): " << below
                  << " peak(s) below zero, " << above << " above" << std::endl;
    } catch (const std::exception& e) {
        std::cout << "  [info] latent histogram check skipped: " << e.what() << std::endl;
    }

    bool a_ok = s3o.wsvr_final_two_thirds > tqo.wsvr_final_two_thirds;
    bool b_ok = s3o.wlvr_spearman > 0.0 && tqo.wlvr_spearman < 0.0;
    std::ostringstream d;
    d << "(a) mean WSVR final 2/3: s3 " << s3o.wsvr_final_two_thirds << " vs quantizer "
      << tqo.wsvr_final_two_thirds << (a_ok ? " (s3 higher)" : " (NOT higher)")
      << "; (b) WLVR spearman: s3 " << s3o.wlvr_spearman << ", quantizer " << tqo.wlvr_spearman
      << "; top-1 s3 " << s3_res.log.final().test_top1 << "% quant "
      << tq_res.log.final().test_top1 << "%; " << secs << "s (limit 7200s)";
    report(6, a_ok && b_ok && secs <= 7200.0, d.str());
}

// ---- criterion 7 ----
void criterion_7() {
    Timer t;
    bool all_higher = true;
    std::ostringstream d;
    d << "final train loss, alpha=0 vs alpha=1e-5:";
    for (uint64_t seed = 1; seed <= 3; ++seed) {
        double with_reg = mnist_run("s3_shift", 1e-5f, seed).final().train_loss;
        double without = mnist_run("s3_shift", 0.0f, seed).final().train_loss;
        d << " [seed " << seed << ": " << without << " vs " << with_reg << "]";
        if (!(without > with_reg)) all_higher = false;
    }
    d << "; " << t.seconds() << "s";
    report(7, all_higher, d.str());
}

// ---- criterion 8 ----
void criterion_8() {
    Timer t;
    std::vector<float> alphas{1e-3f, 1e-4f, 1e-5f};
    double lo = 1e9, hi = -1e9;
    std::ostringstream d;
    d << "s3_shift top-1 across alpha {1e-3,1e-4,1e-5}, scheduler none:";
    for (float a : alphas) {
        double acc = mnist_run("s3_shift", a, 1).final().test_top1;
        d << " " << acc << "%";
        lo = std::min(lo, acc);
        hi = std::max(hi, acc);
    }
    double span = hi - lo;
    d << "; span " << span << " pts (limit 1.0); " << t.seconds() << "s";
    report(8, span <= 1.0, d.str());
}

// ---- criterion 9 ----
void criterion_9() {
    Rng rng(901);
    size_t violations = 0;
    for (int trial = 0; trial < 10000; ++trial) {
        int n = 8 + static_cast<int>(rng.index(64));
        Tensor w = Tensor::uniform({n}, -1.5f, 1.5f, rng);
        if (trial % 3 == 0)
            for (int i = 0; i < n / 4; ++i) w.at(rng.index(static_cast<size_t>(n))) = 0.0f;
        Tensor q = ternary_quantize(w, rng.uniform(0.05f, 1.0f));
        size_t l0w = 0, l0q = 0;
        for (size_t i = 0; i < w.numel(); ++i) {
            if (w.at(i) != 0.0f) ++l0w;
            if (q.at(i) != 0.0f) ++l0q;
        }
        if (l0q > l0w) ++violations;
    }

    // dense prior init: every s3 layer of a fresh model has WLVR exactly 0
    Rng mrng(902);
    ModelSpec spec;
    spec.arch = Architecture::CnnMnist;
    spec.mode = WeightMode::S3Shift;
    auto model = build_model(spec, mrng);
    WeightSnapshot snap = take_snapshot(*model, 0);
    bool wlvr_zero = true;
    size_t s3_layers = 0;
    for (WeightLayer* l : model->weight_layers()) {
        if (!l->quantized()) continue;
        ++s3_layers;
        if (wlvr(snap, l->name) != 0.0) wlvr_zero = false;
    }
    std::ostringstream d;
    d << "l0 inequality over 10^4 random tensors: " << violations
      << " violations; dense-prior init WLVR=0 across " << s3_layers
      << " s3 layers: " << (wlvr_zero ? "yes" : "NO");
    report(9, violations == 0 && wlvr_zero && s3_layers > 0, d.str());
}

// ---- criterion 10 ----
void criterion_10() {
    // a (briefly) trained model so the packed tensors are post-optimization
    ExperimentConfig cfg;
    cfg.model = "cnn_mnist";
    cfg.mode = "s3_shift";
    cfg.dataset = "mnist";
    cfg.data_dir = mnist_dir();
    cfg.epochs = 1;
    cfg.batch_size = 128;
    cfg.lr = 0.1f;
    cfg.seed = 9;
    cfg.threads = 2;
    cfg.out_dir = (work_dir() / "serialization_run").string();
    TrainResult tr = train(cfg);

    LoadedCheckpoint lc = load_checkpoint(tr.checkpoint_path);
    PackedModel pm = export_packed(*lc.model);
    std::string path = (work_dir() / "serialization.s3w").string();
    save_packed_model(pm, path);
    PackedModel loaded = load_packed_model(path);

    bool roundtrip = true;
    size_t packed_count = 0;
    for (size_t i = 0; i < pm.weights.size(); ++i) {
        if (!pm.weights[i].is_packed) continue;
        ++packed_count;
        Tensor a = unpack_tensor(pm.weights[i].codes);
        Tensor b = unpack_tensor(loaded.weights[i].codes);
        if (a.values() != b.values()) roundtrip = false;
    }

    bool rejects = false;
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.write("BAD!", 4);
        f.close();
        try {
            load_s3w(path);
        } catch (const IoError&) {
            rejects = true;
        }
    }
    std::ostringstream d;
    d << "pack/unpack identity across " << packed_count
      << " trained layers: " << (roundtrip ? "yes" : "NO")
      << "; corrupted header rejected: " << (rejects ? "yes" : "NO");
    report(10, roundtrip && rejects && packed_count > 0, d.str());
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> only;
    for (int i = 1; i < argc; ++i) {
        std::string arg = argv[i];
        if (arg == "--only" && i + 1 < argc) {
            std::stringstream ss(argv[++i]);
            std::string tok;
            while (std::getline(ss, tok, ',')) only.insert(std::stoi(tok));
        }
    }
    auto wanted = [&](int c) { return only.empty() || only.count(c) > 0; };

    try {
        if (wanted(1)) criterion_1();
        if (wanted(2)) criterion_2();
        if (wanted(3)) criterion_3();
        if (wanted(4)) criterion_4();
        if (wanted(5)) criterion_5();
        if (wanted(6)) criterion_6();
        if (wanted(7)) criterion_7();
        if (wanted(8)) criterion_8();
        if (wanted(9)) criterion_9();
        if (wanted(10)) criterion_10();
    } catch (const std::exception& e) {
        std::cerr << "acceptance run aborted: " << e.what() << std::endl;
        return 99;
    }
    if (g_failures) std::cout << g_failures << " criterion(s) failed" << std::endl;
    else std::cout << "all requested criteria passed" << std::endl;
    return g_failures;
}
