#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"

#include "shiftforge/config.hpp"
#include "shiftforge/data.hpp"
#include "shiftforge/metrics.hpp"
#include "shiftforge/packed.hpp"
#include "shiftforge/train.hpp"

namespace fs = std::filesystem;
using namespace shiftforge;

namespace {

ExperimentConfig make_config(const std::string& config_path,
                             const std::vector<std::string>& overrides) {
    ExperimentConfig cfg = config_path.empty() ? ExperimentConfig{} : parse_config_file(config_path);
    for (const std::string& o : overrides) apply_override(cfg, o);
    cfg.validate();
    return cfg;
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(item);
    return out;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides,
              const std::string& resume) {
    ExperimentConfig cfg = make_config(config_path, overrides);
    std::cout << "training " << cfg.model << " (" << cfg.mode << ") on " << cfg.dataset << " for "
              << cfg.epochs << " epochs -> " << cfg.out_dir << "\n";
    TrainResult tr = train(cfg, resume);
    const EpochLog& last = tr.log.final();
    std::cout << "done in " << tr.log.wall_seconds << " s; final train loss " << last.train_loss
              << ", test top-1 " << last.test_top1 << "%, top-5 " << last.test_top5 << "%\n"
              << "checkpoint: " << tr.checkpoint_path << "\n";
    return 0;
}

int cmd_ablate(const std::string& config_path, const std::vector<std::string>& overrides,
               const std::string& axis, const std::string& values) {
    ExperimentConfig cfg = make_config(config_path, overrides);
    auto rows = ablate(cfg, axis, split_csv(values));
    std::cout << "axis " << axis << ":\n";
    for (const AblationRow& r : rows)
        std::cout << "  " << r.value << ": train loss " << r.log.final().train_loss << ", top-1 "
                  << r.log.final().test_top1 << "%, top-5 " << r.log.final().test_top5 << "%\n";
    std::cout << "summary: " << (fs::path(cfg.out_dir) / "ablation.csv").string() << "\n";
    return 0;
}

int cmd_metrics(const std::string& run_dir) {
    // recompute WSVR/WLVR from the stored snapshots and rewrite metrics.csv
    fs::path snaps = fs::path(run_dir) / "snapshots";
    if (!fs::exists(snaps)) throw IoError("no snapshots under '" + run_dir + "'");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(snaps))
        if (e.path().extension() == ".sft") files.push_back(e.path());
    std::sort(files.begin(), files.end(), [](const fs::path& a, const fs::path& b) {
        auto num = [](const fs::path& p) {
            std::string s = p.stem().string();
            return std::stoi(s.substr(s.find('_') + 1));
        };
        return num(a) < num(b);
    });
    if (files.empty()) throw IoError("no snapshots under '" + run_dir + "'");

    DynamicsRecord rec;
    WeightSnapshot prev;
    bool have_prev = false;
    for (const fs::path& f : files) {
        std::map<std::string, Tensor> tensors;
        nlohmann::json meta = load_named_tensors(f.string(), tensors);
        WeightSnapshot snap;
        snap.epoch = meta.at("epoch").get<int>();
        snap.layer_names = meta.at("layer_order").get<std::vector<std::string>>();
        for (const std::string& ln : snap.layer_names) {
            snap.effective[ln] = tensors.at("effective." + ln);
            snap.latent[ln] = tensors.at("latent." + ln);
            snap.discrete[ln] = meta.at("discrete").at(ln).get<bool>();
        }
        rec.add_snapshot(snap, have_prev ? &prev : nullptr);
        prev = snap;
        have_prev = true;
    }
    write_metrics_csv((fs::path(run_dir) / "metrics.csv").string(), rec);
    if (rec.epochs.size() >= 3) {
        TrendStats ts = trend_stats(rec);
        std::cout << "snapshots: " << rec.epochs.size() << ", mean WSVR " << ts.wsvr_mean
                  << ", WLVR-vs-epoch spearman " << ts.wlvr_spearman << "\n";
    }
    std::cout << "wrote " << (fs::path(run_dir) / "metrics.csv").string() << "\n";
    return 0;
}

int cmd_export(const std::string& checkpoint, const std::string& out) {
    LoadedCheckpoint lc = load_checkpoint(checkpoint);
    PackedModel pm = export_packed(*lc.model);
    save_packed_model(pm, out);
    size_t packed = 0;
    for (const auto& w : pm.weights)
        if (w.is_packed) ++packed;
    std::cout << "packed " << packed << "/" << pm.weights.size() << " layers -> " << out << " (+ "
              << out << ".aux)\n";
    return 0;
}

int cmd_infer(const std::string& weights, const std::string& input, const std::string& labels_path,
              int frac_bits, size_t limit, bool show_ops, const std::string& out_csv) {
    PackedModel pm = load_packed_model(weights);
    std::string arch = pm.meta.at("architecture").get<std::string>();

    // the input file is an IDX image file or a CIFAR test batch
    Dataset ds;
    fs::path in(input);
    if (in.extension() == ".bin") {
        ds = load_cifar10(in.parent_path().string(), false, 0);
    } else {
        ds = load_mnist(in.parent_path().string(), false);
    }
    (void)labels_path;  // labels come from the paired file in the same directory
    if (limit > 0 && limit < ds.count) ds.count = limit;

    if (show_ops) {
        auto rows = count_ops(pm, {1, ds.channels, ds.height, ds.width});
        OpCounts total = total_ops(rows);
        std::cout << "per-image op counts:\n";
        for (const auto& r : rows)
            std::cout << "  " << r.name << (r.packed ? " [packed]" : " [fp32]") << ": shifts "
                      << r.ops.shifts << ", adds " << r.ops.adds << ", sign flips "
                      << r.ops.sign_flips << ", multiplies " << r.ops.multiplies << "\n";
        std::cout << "  total: shifts " << total.shifts << ", adds " << total.adds
                  << ", sign flips " << total.sign_flips << ", multiplies " << total.multiplies
                  << "\n";
    }

    std::ofstream csv;
    if (!out_csv.empty()) {
        csv.open(out_csv);
        csv << "index,prediction\n";
    }
    size_t correct = 0, done = 0;
    double max_bound = 0.0;
    const size_t batch = 128;
    std::vector<int> labels;
    while (done < ds.count) {
        size_t bs = std::min(batch, ds.count - done);
        std::vector<size_t> idx(bs);
        for (size_t i = 0; i < bs; ++i) idx[i] = done + i;
        Tensor x = make_batch(ds, idx, nullptr, labels);
        ShiftForwardResult r = shift_forward(pm, x, frac_bits);
        max_bound = std::max(max_bound, r.error_bound);
        for (size_t i = 0; i < bs; ++i) {
            int pred = argmax_row(r.logits, static_cast<int>(i));
            if (pred == labels[i]) ++correct;
            if (csv.is_open()) csv << done + i << ',' << pred << '\n';
        }
        done += bs;
    }
    std::cout << "inferred " << done << " images with frac_bits " << frac_bits
              << "; logit error bound " << max_bound << "\n";
    std::cout << "top-1 vs file labels: " << 100.0 * static_cast<double>(correct) / done << "%\n";
    return 0;
}

int cmd_plot(const std::string& run_dir) {
    fs::path rd(run_dir);
    RunLog log = read_runlog_csv((rd / "runlog.csv").string());
    std::vector<double> xs;
    std::vector<double> loss, top1;
    for (const EpochLog& e : log.epochs) {
        xs.push_back(e.epoch);
        loss.push_back(e.train_loss);
        top1.push_back(e.test_top1);
    }
    write_line_chart_svg((rd / "loss.svg").string(), "training loss", {{"train_loss", loss}}, xs);
    write_line_chart_svg((rd / "accuracy.svg").string(), "test top-1 (%)", {{"top1", top1}}, xs);

    DynamicsRecord rec = read_metrics_csv((rd / "metrics.csv").string());
    std::vector<double> epochs_d(rec.epochs.begin(), rec.epochs.end());
    std::vector<std::pair<std::string, std::vector<double>>> wsvr_series, wlvr_series;
    for (const std::string& l : rec.layers) {
        if (rec.wsvr_series.count(l)) wsvr_series.emplace_back(l, rec.wsvr_series.at(l));
        wlvr_series.emplace_back(l, rec.wlvr_series.at(l));
    }
    if (epochs_d.size() >= 2) {
        write_line_chart_svg((rd / "wsvr.svg").string(), "WSVR per layer", wsvr_series, epochs_d);
        write_line_chart_svg((rd / "wlvr.svg").string(), "WLVR per layer", wlvr_series, epochs_d);
    }
    std::cout << "wrote loss.svg accuracy.svg wsvr.svg wlvr.svg under " << run_dir << "\n";
    return 0;
}

int cmd_synth(const std::string& kind, const std::string& out_dir, size_t train_n, size_t test_n,
              uint64_t seed) {
    if (kind == "mnist") {
        write_synthetic_mnist(out_dir, train_n, test_n, seed);
    } else if (kind == "cifar10") {
        write_synthetic_cifar(out_dir, train_n, test_n, seed);
    } else {
        throw ConfigError("synth-data kind must be mnist|cifar10");
    }
    std::cout << "wrote synthetic " << kind << " (" << train_n << " train / " << test_n
              << " test) to " << out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"shiftforge: low-bit shift network training and multiplication-free inference"};
    app.require_subcommand(1);

    std::string config_path, resume, axis, values, run_dir, checkpoint, out, weights, input,
        labels_path, kind = "mnist", out_csv;
    std::vector<std::string> overrides;
    int frac_bits = 16;
    size_t limit = 0, train_n = 10000, test_n = 2000;
    uint64_t seed = 1;
    bool show_ops = false;

    CLI::App* train_cmd = app.add_subcommand("train", "train a model from a config file");
    train_cmd->add_option("--config", config_path, "key = value config file");
    train_cmd->add_option("--set", overrides, "override, e.g. --set lr=0.1");
    train_cmd->add_option("--resume", resume, "checkpoint to resume from");

    CLI::App* ablate_cmd = app.add_subcommand("ablate", "grid of runs along one axis");
    ablate_cmd->add_option("--config", config_path, "base config file");
    ablate_cmd->add_option("--set", overrides, "override, e.g. --set epochs=5");
    ablate_cmd->add_option("--axis", axis, "alpha|alpha_decay|epochs|mode")->required();
    ablate_cmd->add_option("--values", values, "comma separated values")->required();

    CLI::App* metrics_cmd = app.add_subcommand("metrics", "recompute WSVR/WLVR from snapshots");
    metrics_cmd->add_option("--run", run_dir, "run directory")->required();

    CLI::App* export_cmd = app.add_subcommand("export", "pack a checkpoint into .s3w");
    export_cmd->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    export_cmd->add_option("--out", out, "output .s3w path")->required();

    CLI::App* infer_cmd = app.add_subcommand("infer", "multiplication-free inference");
    infer_cmd->add_option("--weights", weights, "packed .s3w file")->required();
    infer_cmd->add_option("--input", input, "IDX image file or CIFAR test_batch.bin")->required();
    infer_cmd->add_option("--labels", labels_path, "IDX label file (optional)");
    infer_cmd->add_option("--frac-bits", frac_bits, "fixed point fractional bits (default 16)");
    infer_cmd->add_option("--limit", limit, "max images");
    infer_cmd->add_option("--out", out_csv, "write predictions csv");
    infer_cmd->add_flag("--count-ops", show_ops, "print per-layer op tallies");

    CLI::App* plot_cmd = app.add_subcommand("plot", "render SVG charts for a run");
    plot_cmd->add_option("--run", run_dir, "run directory")->required();

    CLI::App* synth_cmd = app.add_subcommand("synth-data", "generate a stand-in dataset");
    synth_cmd->add_option("--kind", kind, "mnist|cifar10");
    synth_cmd->add_option("--out", out, "output directory")->required();
    synth_cmd->add_option("--train", train_n, "train images");
    synth_cmd->add_option("--test", test_n, "test images");
    synth_cmd->add_option("--seed", seed, "generator seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train_cmd->parsed()) return cmd_train(config_path, overrides, resume);
        if (ablate_cmd->parsed()) return cmd_ablate(config_path, overrides, axis, values);
        if (metrics_cmd->parsed()) return cmd_metrics(run_dir);
        if (export_cmd->parsed()) return cmd_export(checkpoint, out);
        if (infer_cmd->parsed())
            return cmd_infer(weights, input, labels_path, frac_bits, limit, show_ops, out_csv);
        if (plot_cmd->parsed()) return cmd_plot(run_dir);
        if (synth_cmd->parsed()) return cmd_synth(kind, out, train_n, test_n, seed);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
