#pragma once

#include <string>
#include <vector>

#include "shiftforge/config.hpp"
#include "shiftforge/data.hpp"
#include "shiftforge/layers.hpp"
#include "shiftforge/metrics.hpp"

namespace shiftforge {

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;  // mean task (cross-entropy) loss
    double total_loss = 0.0;  // mean optimized objective incl. regularizers
    double test_top1 = 0.0;
    double test_top5 = 0.0;
    double lr = 0.0;
    double alpha = 0.0;
    double seconds = 0.0;
};

struct RunLog {
    std::vector<EpochLog> epochs;
    double wall_seconds = 0.0;

    const EpochLog& final() const {
        if (epochs.empty()) throw Error("empty run log");
        return epochs.back();
    }
};

void write_runlog_csv(const std::string& path, const RunLog& log);
RunLog read_runlog_csv(const std::string& path);

// SGD with classical momentum: v <- mu*v + g; w <- w - lr*v. Regularizer
// gradients arrive through the loss, not as decoupled decay.
class SgdMomentum {
public:
    SgdMomentum(std::vector<ParamInfo> params, float momentum);
    // latent_lr_scale multiplies the rate of quantized-layer latents only;
    // unit-scale switch latents tolerate far hotter rates than fp32 weights
    void step(float lr, float latent_lr_scale = 1.0f);
    void zero_grad();
    std::vector<std::pair<std::string, Tensor>> velocity_state() const;
    void load_velocity(const std::map<std::string, Tensor>& tensors);

private:
    std::vector<ParamInfo> params_;
    std::vector<Tensor> velocity_;
    float momentum_;
};

struct EvalResult {
    double top1 = 0.0;
    double top5 = 0.0;
    double loss = 0.0;
};

EvalResult evaluate(Model& model, const Dataset& test, int batch_size);

// One optimizer step on one batch; returns (task loss, total loss).
std::pair<double, double> sgd_step(Model& model, SgdMomentum& opt, const Tensor& batch,
                                   const std::vector<int>& labels, float lr,
                                   const RegularizerConfig& reg, const std::string& l2_scope,
                                   int epoch, int total_epochs, float latent_lr_scale = 1.0f);

struct TrainResult {
    RunLog log;
    DynamicsRecord dynamics;
    std::string checkpoint_path;
    std::string run_dir;
};

// Full training run: loads the dataset, trains for cfg.epochs, snapshots at
// the configured cadence, writes runlog.csv / metrics.csv / histograms /
// checkpoint under cfg.out_dir. Deterministic given config + seed.
// stop_after_epoch interrupts a run early without changing the schedule
// horizon; resuming from its checkpoint reproduces the uninterrupted run.
TrainResult train(const ExperimentConfig& cfg, const std::string& resume_checkpoint = "",
                  int stop_after_epoch = -1);

// checkpoint round-trip (model + optimizer + rng + epoch)
void save_checkpoint(const std::string& path, Model& model, const SgdMomentum& opt, const Rng& rng,
                     int next_epoch, const ExperimentConfig& cfg);
struct LoadedCheckpoint {
    ExperimentConfig cfg;
    std::unique_ptr<Model> model;
    std::map<std::string, Tensor> velocity;
    std::string rng_state;
    int next_epoch = 0;
};
LoadedCheckpoint load_checkpoint(const std::string& path);

struct AblationRow {
    std::string value;
    RunLog log;
};

// Grid over one axis (alpha | alpha_decay | epochs | mode); all other
// settings and the seed are shared. Writes <out_dir>/ablation.csv.
std::vector<AblationRow> ablate(const ExperimentConfig& base, const std::string& axis,
                                const std::vector<std::string>& values);

// chart emission (file output only)
void write_line_chart_svg(const std::string& path, const std::string& title,
                          const std::vector<std::pair<std::string, std::vector<double>>>& series,
                          const std::vector<double>& xs);

}  // namespace shiftforge
