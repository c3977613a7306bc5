#include "shiftforge/train.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "shiftforge/ops.hpp"
#include "shiftforge/regularize.hpp"

namespace shiftforge {

namespace fs = std::filesystem;

void write_runlog_csv(const std::string& path, const RunLog& log) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    os << "epoch,train_loss,total_loss,test_top1,test_top5,lr,alpha,seconds\n";
    os.precision(8);
    for (const EpochLog& e : log.epochs)
        os << e.epoch << ',' << e.train_loss << ',' << e.total_loss << ',' << e.test_top1 << ','
           << e.test_top5 << ',' << e.lr << ',' << e.alpha << ',' << e.seconds << '\n';
    if (!os) throw IoError("write failed for '" + path + "'");
}

RunLog read_runlog_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(is, line)) throw IoError("empty run log");
    if (line != "epoch,train_loss,total_loss,test_top1,test_top5,lr,alpha,seconds")
        throw IoError("unexpected run log header: " + line);
    RunLog log;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        EpochLog e;
        char c;
        ls >> e.epoch >> c >> e.train_loss >> c >> e.total_loss >> c >> e.test_top1 >> c >>
            e.test_top5 >> c >> e.lr >> c >> e.alpha >> c >> e.seconds;
        if (!ls) throw IoError("malformed run log row: " + line);
        log.epochs.push_back(e);
    }
    return log;
}

SgdMomentum::SgdMomentum(std::vector<ParamInfo> params, float momentum)
    : params_(std::move(params)), momentum_(momentum) {
    velocity_.reserve(params_.size());
    for (const ParamInfo& p : params_) velocity_.push_back(Tensor::zeros(p.tensor.shape()));
}

void SgdMomentum::step(float lr, float latent_lr_scale) {
    if (lr <= 0.0f) throw ConfigError("sgd step needs lr > 0");
    for (size_t i = 0; i < params_.size(); ++i) {
        Tensor& w = params_[i].tensor;
        if (!w.has_grad()) continue;  // parameter untouched by this graph
        float group_lr = params_[i].is_quant_latent ? lr * latent_lr_scale : lr;
        const auto& g = w.grad_values();
        auto& v = velocity_[i].values();
        auto& wv = w.values();
        for (size_t k = 0; k < wv.size(); ++k) {
            v[k] = momentum_ * v[k] + g[k];
            wv[k] -= group_lr * v[k];
        }
    }
}

void SgdMomentum::zero_grad() {
    for (ParamInfo& p : params_) p.tensor.zero_grad();
}

std::vector<std::pair<std::string, Tensor>> SgdMomentum::velocity_state() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (size_t i = 0; i < params_.size(); ++i)
        out.emplace_back("velocity." + params_[i].name, velocity_[i]);
    return out;
}

void SgdMomentum::load_velocity(const std::map<std::string, Tensor>& tensors) {
    for (size_t i = 0; i < params_.size(); ++i) {
        auto it = tensors.find("velocity." + params_[i].name);
        if (it == tensors.end()) throw IoError("checkpoint misses velocity for " + params_[i].name);
        if (it->second.numel() != velocity_[i].numel())
            throw IoError("velocity size mismatch for " + params_[i].name);
        velocity_[i].values() = it->second.values();
    }
}

EvalResult evaluate(Model& model, const Dataset& test, int batch_size) {
    NoGradGuard ng;
    EvalResult r;
    size_t correct1 = 0, correct5 = 0;
    double loss_sum = 0.0;
    size_t done = 0;
    std::vector<int> labels;
    while (done < test.count) {
        size_t bs = std::min(static_cast<size_t>(batch_size), test.count - done);
        std::vector<size_t> idx(bs);
        std::iota(idx.begin(), idx.end(), done);
        Tensor batch = make_batch(test, idx, nullptr, labels);  // no augmentation
        Tensor logits = model.forward(batch, false);
        loss_sum += static_cast<double>(cross_entropy(logits, labels).item()) * static_cast<double>(bs);
        for (size_t i = 0; i < bs; ++i) {
            int row = static_cast<int>(i);
            if (argmax_row(logits, row) == labels[i]) ++correct1;
            if (label_in_topk(logits, row, labels[i], 5)) ++correct5;
        }
        done += bs;
    }
    r.top1 = 100.0 * static_cast<double>(correct1) / static_cast<double>(test.count);
    r.top5 = 100.0 * static_cast<double>(correct5) / static_cast<double>(test.count);
    r.loss = loss_sum / static_cast<double>(test.count);
    return r;
}

std::pair<double, double> sgd_step(Model& model, SgdMomentum& opt, const Tensor& batch,
                                   const std::vector<int>& labels, float lr,
                                   const RegularizerConfig& reg, const std::string& l2_scope,
                                   int epoch, int total_epochs, float latent_lr_scale) {
    Tensor logits = model.forward(batch, true);
    Tensor task = cross_entropy(logits, labels);

    std::vector<Tensor> l2_latents;
    std::vector<Tensor> sparse_latents;
    for (const ParamInfo& p : model.parameters()) {
        bool aux = p.name.ends_with(".bias") || p.name.ends_with(".gamma") ||
                   p.name.ends_with(".beta");
        bool include = l2_scope == "all" || (l2_scope == "weights" && !aux) ||
                       (l2_scope == "fp_layers" && !p.is_quant_latent);
        if (include) l2_latents.push_back(p.tensor);
        if (p.is_w_sparse) sparse_latents.push_back(p.tensor);
    }
    Tensor loss = total_loss(task, l2_latents, sparse_latents, reg, epoch, total_epochs);

    model.zero_grad();
    backward(loss);
    opt.step(lr, latent_lr_scale);
    return {static_cast<double>(task.item()), static_cast<double>(loss.item())};
}

void save_checkpoint(const std::string& path, Model& model, const SgdMomentum& opt, const Rng& rng,
                     int next_epoch, const ExperimentConfig& cfg) {
    nlohmann::json meta;
    meta["kind"] = "checkpoint";
    meta["config"] = cfg.to_json();
    meta["rng_state"] = rng.save_state();
    meta["next_epoch"] = next_epoch;
    std::vector<std::pair<std::string, Tensor>> tensors;
    for (const ParamInfo& p : model.state()) tensors.emplace_back(p.name, p.tensor);
    for (auto& kv : opt.velocity_state()) tensors.push_back(kv);
    save_named_tensors(path, meta, tensors);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::map<std::string, Tensor> tensors;
    nlohmann::json meta = load_named_tensors(path, tensors);
    if (!meta.contains("kind") || meta["kind"] != "checkpoint")
        throw IoError("'" + path + "' is not a checkpoint");
    LoadedCheckpoint lc;
    lc.cfg = ExperimentConfig::from_json(meta.at("config"));
    lc.rng_state = meta.at("rng_state").get<std::string>();
    lc.next_epoch = meta.at("next_epoch").get<int>();
    Rng scratch(lc.cfg.seed);
    lc.model = build_model(lc.cfg.model_spec(), scratch);
    for (ParamInfo& p : lc.model->state()) {
        auto it = tensors.find(p.name);
        if (it == tensors.end()) throw IoError("checkpoint misses tensor '" + p.name + "'");
        if (it->second.numel() != p.tensor.numel())
            throw IoError("checkpoint tensor '" + p.name + "' has wrong size");
        p.tensor.values() = it->second.values();
    }
    lc.velocity = std::move(tensors);
    return lc;
}

TrainResult train(const ExperimentConfig& cfg_in, const std::string& resume_checkpoint,
                  int stop_after_epoch) {
    ExperimentConfig cfg = cfg_in;
    cfg.validate();
    int last_epoch = cfg.epochs;
    if (stop_after_epoch > 0 && stop_after_epoch < cfg.epochs) last_epoch = stop_after_epoch;
    if (cfg.threads > 0) set_num_threads(cfg.threads);

    int subset_n = 0;
    DatasetKind kind = dataset_kind_from_string(cfg.dataset, &subset_n);
    std::string dir = cfg.resolved_data_dir();
    Dataset train_ds = load_dataset(kind, true, dir, subset_n);
    Dataset test_ds = load_dataset(kind, false, dir, subset_n);

    Rng rng(cfg.seed);
    std::unique_ptr<Model> model;
    int start_epoch = 0;
    std::unique_ptr<SgdMomentum> opt;
    if (!resume_checkpoint.empty()) {
        LoadedCheckpoint lc = load_checkpoint(resume_checkpoint);
        model = std::move(lc.model);
        opt = std::make_unique<SgdMomentum>(model->parameters(), cfg.momentum);
        opt->load_velocity(lc.velocity);
        rng.load_state(lc.rng_state);
        start_epoch = lc.next_epoch;
    } else {
        model = build_model(cfg.model_spec(), rng);
        opt = std::make_unique<SgdMomentum>(model->parameters(), cfg.momentum);
    }

    fs::create_directories(cfg.out_dir);
    fs::create_directories(fs::path(cfg.out_dir) / "snapshots");
    write_config_file((fs::path(cfg.out_dir) / "config.txt").string(), cfg);

    RegularizerConfig reg = cfg.reg_config();
    LrSchedule sched = cfg.lr_sched();

    TrainResult result;
    result.run_dir = cfg.out_dir;
    WeightSnapshot prev_snap;
    bool have_prev = false;

    // epoch 0 state: snapshot before any update so WLVR at init is visible
    {
        WeightSnapshot snap = take_snapshot(*model, start_epoch);
        result.dynamics.add_snapshot(snap, nullptr);
        prev_snap = snap;
        have_prev = true;
    }

    auto wall0 = std::chrono::steady_clock::now();
    std::vector<size_t> order(train_ds.count);

    for (int epoch = start_epoch; epoch < last_epoch; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();
        float lr = lr_at(sched, epoch);
        double ep_task = 0.0, ep_total = 0.0;
        size_t batches = 0;

        // canonical order before shuffling so the permutation is a pure
        // function of the rng state (checkpoints restore it exactly)
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(order);
        std::vector<int> labels;
        size_t pos = 0;
        while (pos < train_ds.count) {
            size_t bs = std::min(static_cast<size_t>(cfg.batch_size), train_ds.count - pos);
            if (bs < 2) break;  // batchnorm training mode needs >= 2
            std::vector<size_t> idx(order.begin() + static_cast<long>(pos),
                                    order.begin() + static_cast<long>(pos + bs));
            Tensor batch = make_batch(train_ds, idx, &rng, labels);
            double task, total;
            try {
                std::tie(task, total) = sgd_step(*model, *opt, batch, labels, lr, reg, cfg.l2_scope,
                                                 epoch, cfg.epochs, cfg.latent_lr_scale);
            } catch (const NumericError& e) {
                throw NumericError("run aborted at epoch " + std::to_string(epoch) + ", batch " +
                                   std::to_string(batches) + ": " + e.what());
            }
            ep_task += task;
            ep_total += total;
            ++batches;
            pos += bs;
        }

        EvalResult ev = evaluate(*model, test_ds, cfg.eval_batch);

        EpochLog el;
        el.epoch = epoch + 1;
        el.train_loss = batches ? ep_task / static_cast<double>(batches) : 0.0;
        el.total_loss = batches ? ep_total / static_cast<double>(batches) : 0.0;
        el.test_top1 = ev.top1;
        el.test_top5 = ev.top5;
        el.lr = lr;
        el.alpha = alpha_at(reg, epoch, cfg.epochs);
        el.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.log.epochs.push_back(el);

        bool snap_now = ((epoch + 1) % cfg.snapshot_every == 0) || (epoch + 1 == last_epoch);
        if (snap_now) {
            WeightSnapshot snap = take_snapshot(*model, epoch + 1);
            result.dynamics.add_snapshot(snap, have_prev ? &prev_snap : nullptr);
            std::vector<std::pair<std::string, Tensor>> st;
            for (const std::string& ln : snap.layer_names) {
                st.emplace_back("effective." + ln, snap.effective.at(ln));
                st.emplace_back("latent." + ln, snap.latent.at(ln));
            }
            nlohmann::json meta;
            meta["kind"] = "snapshot";
            meta["epoch"] = epoch + 1;
            nlohmann::json disc = nlohmann::json::object();
            for (const std::string& ln : snap.layer_names) disc[ln] = snap.discrete.at(ln);
            meta["discrete"] = disc;
            meta["layer_order"] = snap.layer_names;
            save_named_tensors((fs::path(cfg.out_dir) / "snapshots" /
                                ("epoch_" + std::to_string(epoch + 1) + ".sft"))
                                   .string(),
                               meta, st);
            prev_snap = snap;
            have_prev = true;
        }
    }

    result.log.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();

    result.checkpoint_path = (fs::path(cfg.out_dir) / "checkpoint.sft").string();
    save_checkpoint(result.checkpoint_path, *model, *opt, rng, last_epoch, cfg);
    write_runlog_csv((fs::path(cfg.out_dir) / "runlog.csv").string(), result.log);
    write_metrics_csv((fs::path(cfg.out_dir) / "metrics.csv").string(), result.dynamics);
    {
        WeightSnapshot last = take_snapshot(*model, last_epoch);
        write_histogram_json((fs::path(cfg.out_dir) / "histograms.json").string(), last,
                             cfg.histogram_bins);
    }
    return result;
}

std::vector<AblationRow> ablate(const ExperimentConfig& base, const std::string& axis,
                                const std::vector<std::string>& values) {
    if (values.empty()) throw ConfigError("ablate: empty axis value list");
    if (axis != "alpha" && axis != "alpha_decay" && axis != "epochs" && axis != "mode")
        throw ConfigError("ablate: unsupported axis '" + axis +
                          "' (expected alpha|alpha_decay|epochs|mode)");
    std::vector<AblationRow> rows;
    for (const std::string& v : values) {
        ExperimentConfig cfg = base;
        cfg.set_key(axis, v);
        cfg.out_dir = (fs::path(base.out_dir) / (axis + "_" + v)).string();
        cfg.validate();
        TrainResult tr = train(cfg);
        rows.push_back({v, tr.log});
    }
    std::ofstream os(fs::path(base.out_dir) / "ablation.csv");
    if (!os) throw IoError("cannot write ablation summary");
    os << "axis,value,final_train_loss,final_top1,final_top5\n";
    for (const AblationRow& r : rows)
        os << axis << ',' << r.value << ',' << r.log.final().train_loss << ','
           << r.log.final().test_top1 << ',' << r.log.final().test_top5 << '\n';
    return rows;
}

void write_line_chart_svg(const std::string& path, const std::string& title,
                          const std::vector<std::pair<std::string, std::vector<double>>>& series,
                          const std::vector<double>& xs) {
    const int W = 860, H = 480, ML = 70, MR = 180, MT = 50, MB = 50;
    double ymin = 1e300, ymax = -1e300;
    for (const auto& [name, ys] : series)
        for (double y : ys) {
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
    if (series.empty() || xs.size() < 2) throw ConfigError("chart needs at least 2 points");
    if (ymin == ymax) {
        ymin -= 1.0;
        ymax += 1.0;
    }
    double xmin = xs.front(), xmax = xs.back();
    if (xmin == xmax) xmax = xmin + 1.0;
    auto X = [&](double x) { return ML + (x - xmin) / (xmax - xmin) * (W - ML - MR); };
    auto Y = [&](double y) { return H - MB - (y - ymin) / (ymax - ymin) * (H - MT - MB); };
    const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                             "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
    std::ofstream os(path);
    if (!os) throw IoError("cannot write chart '" + path + "'");
    os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n";
    os << "<rect width='100%' height='100%' fill='white'/>\n";
    os << "<text x='" << W / 2 << "' y='24' text-anchor='middle' font-size='16'>" << title
       << "</text>\n";
    os << "<line x1='" << ML << "' y1='" << H - MB << "' x2='" << W - MR << "' y2='" << H - MB
       << "' stroke='black'/>\n";
    os << "<line x1='" << ML << "' y1='" << MT << "' x2='" << ML << "' y2='" << H - MB
       << "' stroke='black'/>\n";
    for (int i = 0; i <= 4; ++i) {
        double y = ymin + (ymax - ymin) * i / 4.0;
        os << "<text x='" << ML - 8 << "' y='" << Y(y) + 4
           << "' text-anchor='end' font-size='11'>" << y << "</text>\n";
        double x = xmin + (xmax - xmin) * i / 4.0;
        os << "<text x='" << X(x) << "' y='" << H - MB + 18
           << "' text-anchor='middle' font-size='11'>" << x << "</text>\n";
    }
    int si = 0;
    for (const auto& [name, ys] : series) {
        const char* color = palette[si % 10];
        os << "<polyline fill='none' stroke='" << color << "' stroke-width='1.5' points='";
        size_t n = std::min(ys.size(), xs.size());
        size_t off = xs.size() - n;  // series shorter than xs start later (wsvr)
        for (size_t i = 0; i < n; ++i) os << X(xs[off + i]) << ',' << Y(ys[i]) << ' ';
        os << "'/>\n";
        if (si < 24)
            os << "<text x='" << W - MR + 10 << "' y='" << MT + 14 * si
               << "' font-size='10' fill='" << color << "'>" << name << "</text>\n";
        ++si;
    }
    os << "</svg>\n";
}

}  // namespace shiftforge
