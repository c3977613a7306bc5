#include "shiftforge/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace shiftforge {

WeightSnapshot take_snapshot(Model& model, int epoch) {
    NoGradGuard ng;
    WeightSnapshot snap;
    snap.epoch = epoch;
    for (WeightLayer* l : model.weight_layers()) {
        snap.layer_names.push_back(l->name);
        snap.effective[l->name] = l->effective_weight().detached_copy();
        snap.discrete[l->name] = l->quantized();
        switch (l->qc.mode) {
            case WeightMode::Fp32:
            case WeightMode::TernaryQuant:
            case WeightMode::DeepShift:
                snap.latent[l->name] = l->weight.detached_copy();
                break;
            case WeightMode::S3Ternary:
            case WeightMode::S3Shift:
                // the sparsity latent drives both the zero pattern and WLVR
                snap.latent[l->name] = l->s3.w_sparse.detached_copy();
                break;
        }
    }
    return snap;
}

namespace {
inline int sign3(float v) { return v > 0.0f ? 1 : (v < 0.0f ? -1 : 0); }

const Tensor& layer_of(const std::map<std::string, Tensor>& m, const std::string& layer) {
    auto it = m.find(layer);
    if (it == m.end()) throw Error("snapshot has no layer '" + layer + "'");
    return it->second;
}
}  // namespace

double wsvr_tensors(const Tensor& prev, const Tensor& next) {
    if (prev.shape() != next.shape())
        throw ShapeError("wsvr: snapshot shapes differ for one layer");
    size_t n = prev.numel();
    if (n == 0) throw ShapeError("wsvr on empty layer");
    size_t changed = 0;
    for (size_t i = 0; i < n; ++i)
        if (sign3(prev.at(i)) != sign3(next.at(i))) ++changed;
    return static_cast<double>(changed) / static_cast<double>(n);
}

double wsvr(const WeightSnapshot& prev, const WeightSnapshot& next, const std::string& layer) {
    return wsvr_tensors(layer_of(prev.effective, layer), layer_of(next.effective, layer));
}

double wlvr_continuous(const Tensor& w, float tau) {
    size_t n = w.numel();
    if (n == 0) throw ShapeError("wlvr on empty layer");
    float mx = 0.0f;
    for (float v : w.values()) mx = std::max(mx, std::fabs(v));
    if (mx == 0.0f) return 1.0;
    size_t low = 0;
    for (float v : w.values())
        if (std::fabs(v) / mx <= tau) ++low;
    return static_cast<double>(low) / static_cast<double>(n);
}

double wlvr_discrete(const Tensor& w) {
    size_t n = w.numel();
    if (n == 0) throw ShapeError("wlvr on empty layer");
    size_t zeros = 0;
    for (float v : w.values())
        if (v == 0.0f) ++zeros;
    return static_cast<double>(zeros) / static_cast<double>(n);
}

double wlvr(const WeightSnapshot& snap, const std::string& layer, float tau) {
    const Tensor& eff = layer_of(snap.effective, layer);
    bool discrete = snap.discrete.count(layer) ? snap.discrete.at(layer) : false;
    return discrete ? wlvr_discrete(eff) : wlvr_continuous(eff, tau);
}

Histogram weight_histogram(const Tensor& w, int bins) {
    if (bins < 2) throw ConfigError("weight_histogram needs bins >= 2");
    size_t n = w.numel();
    if (n == 0) throw ShapeError("weight_histogram on empty layer");
    float lo = w.at(0), hi = w.at(0);
    for (float v : w.values()) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    Histogram h;
    h.lo = lo;
    h.hi = hi;
    h.bin_centers.resize(static_cast<size_t>(bins));
    h.density.assign(static_cast<size_t>(bins), 0.0);
    if (lo == hi) {
        // degenerate: all mass in one (central) bin
        for (int b = 0; b < bins; ++b) h.bin_centers[static_cast<size_t>(b)] = lo;
        h.density[static_cast<size_t>(bins / 2)] = 1.0;
        return h;
    }
    double width = (static_cast<double>(hi) - lo) / bins;
    for (int b = 0; b < bins; ++b) h.bin_centers[static_cast<size_t>(b)] = lo + (b + 0.5) * width;
    for (float v : w.values()) {
        int b = static_cast<int>((static_cast<double>(v) - lo) / width);
        if (b >= bins) b = bins - 1;
        if (b < 0) b = 0;
        h.density[static_cast<size_t>(b)] += 1.0;
    }
    for (double& d : h.density) d /= static_cast<double>(n);
    return h;
}

Histogram weight_histogram(const WeightSnapshot& snap, const std::string& layer, int bins) {
    return weight_histogram(layer_of(snap.latent, layer), bins);
}

std::vector<int> histogram_peaks(const Histogram& h) {
    std::vector<int> peaks;
    int bins = static_cast<int>(h.density.size());
    for (int b = 0; b < bins; ++b) {
        double left = b > 0 ? h.density[static_cast<size_t>(b - 1)] : -1.0;
        double right = b + 1 < bins ? h.density[static_cast<size_t>(b + 1)] : -1.0;
        if (h.density[static_cast<size_t>(b)] > left && h.density[static_cast<size_t>(b)] > right)
            peaks.push_back(b);
    }
    return peaks;
}

namespace {
std::vector<double> average_ranks(const std::vector<double>& xs) {
    size_t n = xs.size();
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return xs[a] < xs[b]; });
    std::vector<double> ranks(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && xs[idx[j + 1]] == xs[idx[i]]) ++j;
        double avg = (static_cast<double>(i) + j) / 2.0 + 1.0;
        for (size_t k = i; k <= j; ++k) ranks[idx[k]] = avg;
        i = j + 1;
    }
    return ranks;
}
}  // namespace

double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size()) throw ShapeError("spearman: series lengths differ");
    size_t n = xs.size();
    if (n < 2) throw ConfigError("spearman needs at least 2 points");
    std::vector<double> rx = average_ranks(xs), ry = average_ranks(ys);
    double mx = 0.0, my = 0.0;
    for (size_t i = 0; i < n; ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double cov = 0.0, vx = 0.0, vy = 0.0;
    for (size_t i = 0; i < n; ++i) {
        cov += (rx[i] - mx) * (ry[i] - my);
        vx += (rx[i] - mx) * (rx[i] - mx);
        vy += (ry[i] - my) * (ry[i] - my);
    }
    if (vx == 0.0 || vy == 0.0) return 0.0;  // ties convention: constant series -> 0
    return cov / std::sqrt(vx * vy);
}

void DynamicsRecord::add_snapshot(const WeightSnapshot& snap, const WeightSnapshot* prev) {
    if (layers.empty()) layers = snap.layer_names;
    epochs.push_back(snap.epoch);
    for (const std::string& l : layers) {
        wlvr_series[l].push_back(wlvr(snap, l));
        if (prev) wsvr_series[l].push_back(wsvr(*prev, snap, l));
    }
}

TrendStats trend_stats(const DynamicsRecord& record) {
    if (record.epochs.size() < 3) throw ConfigError("trend_stats needs at least 3 snapshots");
    TrendStats ts;
    double wsum = 0.0;
    size_t wcount = 0;
    double ssum = 0.0;
    size_t scount = 0;
    std::vector<double> epochs_d(record.epochs.begin(), record.epochs.end());
    for (const std::string& l : record.layers) {
        auto wit = record.wsvr_series.find(l);
        if (wit != record.wsvr_series.end())
            for (double v : wit->second) {
                wsum += v;
                ++wcount;
            }
        auto lit = record.wlvr_series.find(l);
        if (lit != record.wlvr_series.end() && lit->second.size() == epochs_d.size()) {
            ssum += spearman(epochs_d, lit->second);
            ++scount;
        }
    }
    ts.wsvr_mean = wcount ? wsum / static_cast<double>(wcount) : 0.0;
    ts.wlvr_spearman = scount ? ssum / static_cast<double>(scount) : 0.0;
    return ts;
}

void write_metrics_csv(const std::string& path, const DynamicsRecord& record) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    os << "epoch,layer,wsvr,wlvr\n";
    for (size_t e = 0; e < record.epochs.size(); ++e) {
        for (const std::string& l : record.layers) {
            os << record.epochs[e] << ',' << l << ',';
            const auto& ws = record.wsvr_series.count(l) ? record.wsvr_series.at(l)
                                                         : std::vector<double>{};
            if (e >= 1 && e - 1 < ws.size()) os << ws[e - 1];
            os << ',' << record.wlvr_series.at(l)[e] << '\n';
        }
    }
    if (!os) throw IoError("write failed for '" + path + "'");
}

DynamicsRecord read_metrics_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(is, line)) throw IoError("empty metrics csv");
    if (line != "epoch,layer,wsvr,wlvr") throw IoError("unexpected metrics csv header: " + line);
    DynamicsRecord rec;
    std::vector<std::string> layer_order;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string epoch_s, layer, wsvr_s, wlvr_s;
        std::getline(ls, epoch_s, ',');
        std::getline(ls, layer, ',');
        std::getline(ls, wsvr_s, ',');
        std::getline(ls, wlvr_s, ',');
        int epoch = std::stoi(epoch_s);
        if (rec.epochs.empty() || epoch != rec.epochs.back()) rec.epochs.push_back(epoch);
        if (rec.epochs.size() == 1) layer_order.push_back(layer);
        if (!wsvr_s.empty()) rec.wsvr_series[layer].push_back(std::stod(wsvr_s));
        rec.wlvr_series[layer].push_back(std::stod(wlvr_s));
    }
    rec.layers = layer_order;
    return rec;
}

void write_histogram_json(const std::string& path, const WeightSnapshot& snap, int bins) {
    nlohmann::json j;
    j["epoch"] = snap.epoch;
    j["bins"] = bins;
    nlohmann::json layers = nlohmann::json::object();
    for (const std::string& l : snap.layer_names) {
        Histogram h = weight_histogram(snap, l, bins);
        layers[l] = {{"lo", h.lo}, {"hi", h.hi}, {"centers", h.bin_centers}, {"density", h.density}};
    }
    j["layers"] = layers;
    std::ofstream os(path);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    os << j.dump(2) << '\n';
}

}  // namespace shiftforge
