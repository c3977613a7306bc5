#include "doctest.h"

#include <cmath>
#include <cstring>

#include "shiftforge/layers.hpp"
#include "shiftforge/ops.hpp"
#include "test_util.hpp"

using namespace shiftforge;

namespace {
ModelSpec spec_of(Architecture arch, WeightMode mode, int t = 2) {
    ModelSpec s;
    s.arch = arch;
    s.mode = mode;
    s.t = t;
    return s;
}
}  // namespace

TEST_CASE("mlp parameter count is exactly 203530") {
    Rng rng(1);
    auto model = build_model(spec_of(Architecture::MlpMnist, WeightMode::Fp32), rng);
    CHECK(model->parameter_count() == 784u * 256 + 256 + 256 * 10 + 10);
}

TEST_CASE("resnet20 parameter count is about 0.27M") {
    Rng rng(1);
    auto model = build_model(spec_of(Architecture::ResNet20Cifar, WeightMode::Fp32), rng);
    size_t n = model->parameter_count();
    CHECK(n > 265000u);
    CHECK(n < 285000u);
}

TEST_CASE("same seed gives identical initial effective weights") {
    for (WeightMode m : {WeightMode::Fp32, WeightMode::TernaryQuant, WeightMode::S3Shift}) {
        Rng r1(42), r2(42);
        auto m1 = build_model(spec_of(Architecture::CnnMnist, m), r1);
        auto m2 = build_model(spec_of(Architecture::CnnMnist, m), r2);
        auto l1 = m1->weight_layers();
        auto l2 = m2->weight_layers();
        REQUIRE(l1.size() == l2.size());
        NoGradGuard ng;
        for (size_t i = 0; i < l1.size(); ++i) {
            Tensor e1 = l1[i]->effective_weight();
            Tensor e2 = l2[i]->effective_weight();
            CHECK(std::memcmp(e1.ptr(), e2.ptr(), e1.numel() * sizeof(float)) == 0);
        }
    }
}

TEST_CASE("unknown architecture / mode strings raise") {
    CHECK_THROWS_AS(architecture_from_string("vgg"), ConfigError);
    CHECK_THROWS_AS(weight_mode_from_string("int8"), ConfigError);
}

TEST_CASE("zero input through a bias-free fp32 mlp gives zero logits") {
    Rng rng(5);
    ModelSpec s = spec_of(Architecture::MlpMnist, WeightMode::Fp32);
    auto model = build_model(s, rng);
    for (WeightLayer* l : model->weight_layers()) {
        l->has_bias = false;  // drop the bias path entirely
    }
    Tensor x = Tensor::zeros({2, 1, 28, 28});
    NoGradGuard ng;
    Tensor logits = model->forward(x, false);
    for (size_t i = 0; i < logits.numel(); ++i) CHECK(logits.at(i) == 0.0f);
}

TEST_CASE("s3 logits are invariant to latent perturbations that cross no threshold") {
    Rng rng(9);
    auto model = build_model(spec_of(Architecture::CnnMnist, WeightMode::S3Ternary), rng);
    Tensor x = Tensor::uniform({4, 1, 28, 28}, -1.0f, 1.0f, rng);
    NoGradGuard ng;
    Tensor before = model->forward(x, false);
    // scale latents by positive factors: signs (and hence projections) unchanged
    for (WeightLayer* l : model->weight_layers()) {
        if (!l->quantized()) continue;
        for (float& v : l->s3.w_sign.values()) v *= rng.uniform(0.5f, 1.5f);
        for (float& v : l->s3.w_sparse.values()) v *= rng.uniform(0.5f, 1.5f);
    }
    Tensor after = model->forward(x, false);
    CHECK(std::memcmp(before.ptr(), after.ptr(), before.numel() * sizeof(float)) == 0);
}

TEST_CASE("mode equivalence: s3_shift projection loaded into an fp32 model, bitwise") {
    Rng rng(14);
    ModelSpec s = spec_of(Architecture::CnnMnist, WeightMode::S3Shift);
    auto s3_model = build_model(s, rng);

    Rng rng2(15);
    auto fp_model = build_model(spec_of(Architecture::CnnMnist, WeightMode::Fp32), rng2);

    // copy every s3 projection (values in {0,+-1,+-2,+-4}) into the fp32 twin
    auto s3_layers = s3_model->weight_layers();
    auto fp_layers = fp_model->weight_layers();
    REQUIRE(s3_layers.size() == fp_layers.size());
    NoGradGuard ng;
    for (size_t i = 0; i < s3_layers.size(); ++i) {
        Tensor eff = s3_layers[i]->effective_weight();
        fp_layers[i]->weight.values() = eff.values();
    }
    // align the batchnorm state too
    auto s3_norms = s3_model->norm_layers();
    auto fp_norms = fp_model->norm_layers();
    for (size_t i = 0; i < s3_norms.size(); ++i) {
        fp_norms[i]->gamma.values() = s3_norms[i]->gamma.values();
        fp_norms[i]->beta.values() = s3_norms[i]->beta.values();
        fp_norms[i]->running_mean.values() = s3_norms[i]->running_mean.values();
        fp_norms[i]->running_var.values() = s3_norms[i]->running_var.values();
    }
    Tensor x = Tensor::uniform({4, 1, 28, 28}, -1.0f, 1.0f, rng);
    Tensor a = s3_model->forward(x, false);
    Tensor b = fp_model->forward(x, false);
    CHECK(std::memcmp(a.ptr(), b.ptr(), a.numel() * sizeof(float)) == 0);
}

TEST_CASE("effective weights per mode") {
    Rng rng(21);

    SUBCASE("fp32 mode returns the latent itself") {
        auto model = build_model(spec_of(Architecture::MlpMnist, WeightMode::Fp32), rng);
        WeightLayer* l = model->weight_layers()[0];
        NoGradGuard ng;
        Tensor eff = l->effective_weight();
        CHECK(eff.impl == l->weight.impl);
    }

    SUBCASE("s3_shift effective values live in {0,+-1,+-2,+-4}") {
        auto model = build_model(spec_of(Architecture::CnnMnist, WeightMode::S3Shift), rng);
        NoGradGuard ng;
        for (WeightLayer* l : model->weight_layers()) {
            if (!l->quantized()) continue;
            Tensor eff = l->effective_weight();
            for (size_t i = 0; i < eff.numel(); ++i) {
                float a = std::fabs(eff.at(i));
                CHECK((a == 0.0f || a == 1.0f || a == 2.0f || a == 4.0f));
            }
        }
    }

    SUBCASE("fixed delta larger than max|w| zeroes a ternary layer") {
        ModelSpec s = spec_of(Architecture::MlpMnist, WeightMode::TernaryQuant);
        s.delta_auto = false;
        s.delta = 100.0f;
        auto model = build_model(s, rng);
        NoGradGuard ng;
        for (WeightLayer* l : model->weight_layers()) {
            if (!l->quantized()) continue;
            Tensor eff = l->effective_weight();
            for (size_t i = 0; i < eff.numel(); ++i) CHECK(eff.at(i) == 0.0f);
        }
    }
}

TEST_CASE("shift-mode effective weights are exactly representable floats") {
    Rng rng(23);
    auto model = build_model(spec_of(Architecture::CnnMnist, WeightMode::S3Shift), rng);
    NoGradGuard ng;
    for (WeightLayer* l : model->weight_layers()) {
        if (!l->quantized()) continue;
        Tensor eff = l->effective_weight();
        for (size_t i = 0; i < eff.numel(); ++i) {
            float v = eff.at(i);
            CHECK(std::nearbyintf(v) == v);  // small powers of two are exact integers
        }
    }
}

TEST_CASE("first-layer exemption holds for every quantized mode") {
    for (WeightMode m :
         {WeightMode::TernaryQuant, WeightMode::DeepShift, WeightMode::S3Ternary, WeightMode::S3Shift}) {
        Rng rng(31);
        ModelSpec s = spec_of(Architecture::CnnMnist, m);
        REQUIRE(s.first_layer_fp32);
        auto model = build_model(s, rng);
        WeightLayer* first = model->weight_layers().front();
        CHECK(first->qc.mode == WeightMode::Fp32);
        NoGradGuard ng;
        Tensor eff = first->effective_weight();
        CHECK(eff.impl == first->weight.impl);
    }
}

TEST_CASE("quantize_last=false leaves the classifier in fp32") {
    Rng rng(32);
    ModelSpec s = spec_of(Architecture::CnnMnist, WeightMode::S3Ternary);
    s.quantize_last = false;
    auto model = build_model(s, rng);
    CHECK(model->weight_layers().back()->qc.mode == WeightMode::Fp32);
}

TEST_CASE("grad flow report: zero middle layer blocks upstream gradient") {
    // bias-free two-layer mlp: fc2 all-zero => dL/d(fc1 weight) is identically 0
    Rng rng(41);
    ModelSpec s = spec_of(Architecture::MlpMnist, WeightMode::TernaryQuant);
    s.first_layer_fp32 = true;
    s.delta_auto = false;
    s.delta = 1000.0f;  // dead zone swallows every fc2 weight
    auto model = build_model(s, rng);
    for (WeightLayer* l : model->weight_layers()) l->has_bias = false;

    Tensor x = Tensor::uniform({8, 1, 28, 28}, -1.0f, 1.0f, rng);
    std::vector<int> labels(8, 3);
    Tensor loss = cross_entropy(model->forward(x, true), labels);
    backward(loss);
    auto report = grad_flow_report(*model);
    REQUIRE(report.size() == 2);
    CHECK(report[0].grad_l2 == 0.0);
    CHECK(report[0].zero_fraction == 1.0);
    CHECK(report[1].grad_l2 > 0.0);  // the quantized layer itself still sees gradient
}

TEST_CASE("grad flow report: healthy fp32 model has positive norms everywhere") {
    Rng rng(43);
    auto model = build_model(spec_of(Architecture::CnnMnist, WeightMode::Fp32), rng);
    Tensor x = Tensor::uniform({8, 1, 28, 28}, -1.0f, 1.0f, rng);
    std::vector<int> labels{0, 1, 2, 3, 4, 5, 6, 7};
    Tensor loss = cross_entropy(model->forward(x, true), labels);
    backward(loss);
    for (const LayerGradStats& s : grad_flow_report(*model)) CHECK(s.grad_l2 > 0.0);
}

TEST_CASE("grad flow report requires a completed backward") {
    Rng rng(44);
    auto model = build_model(spec_of(Architecture::MlpMnist, WeightMode::Fp32), rng);
    CHECK_THROWS_AS(grad_flow_report(*model), Error);
}

TEST_CASE("forced sparsity strictly raises the zero-gradient fraction upstream") {
    auto zero_grad_fraction_of_first_layer = [](float sparsity) {
        Rng rng(47);
        ModelSpec s = spec_of(Architecture::MlpMnist, WeightMode::TernaryQuant);
        auto model = build_model(s, rng);
        for (WeightLayer* l : model->weight_layers()) l->has_bias = false;
        WeightLayer* fc2 = model->weight_layers()[1];
        // force the requested fraction of fc2 latents into the dead zone
        fc2->qc.delta_auto = false;
        fc2->qc.delta = 0.5f;
        size_t n = fc2->weight.numel();
        for (size_t i = 0; i < n; ++i) {
            bool dead = rng.uniform(0.0f, 1.0f) < sparsity;
            float mag = dead ? 0.25f : 0.75f;
            fc2->weight.at(i) = (rng.index(2) ? mag : -mag);
        }
        Tensor x = Tensor::uniform({16, 1, 28, 28}, -1.0f, 1.0f, rng);
        std::vector<int> labels(16);
        for (auto& l : labels) l = static_cast<int>(rng.index(10));
        Tensor loss = cross_entropy(model->forward(x, true), labels);
        backward(loss);
        return grad_flow_report(*model)[0].zero_fraction;
    };
    double dense = zero_grad_fraction_of_first_layer(0.0f);
    double sparse = zero_grad_fraction_of_first_layer(0.9f);
    CHECK(sparse > dense);
}

TEST_CASE("checkpoint container round-trips tensors and meta") {
    Rng rng(53);
    std::vector<std::pair<std::string, Tensor>> tensors{
        {"a", Tensor::uniform({3, 4}, -1.0f, 1.0f, rng)},
        {"b", Tensor::uniform({7}, -1.0f, 1.0f, rng)}};
    nlohmann::json meta{{"kind", "test"}, {"epoch", 3}};
    std::string path = "test_container.sft";
    save_named_tensors(path, meta, tensors);
    std::map<std::string, Tensor> loaded;
    nlohmann::json meta2 = load_named_tensors(path, loaded);
    CHECK(meta2["kind"] == "test");
    CHECK(loaded.at("a").shape() == std::vector<int>{3, 4});
    CHECK(loaded.at("a").values() == tensors[0].second.values());
    CHECK(loaded.at("b").values() == tensors[1].second.values());
    std::remove(path.c_str());
}
