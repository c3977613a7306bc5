#pragma once

#include <map>
#include <string>
#include <vector>

#include "shiftforge/layers.hpp"
#include "shiftforge/tensor.hpp"

namespace shiftforge {

// Per-epoch capture of each weighted layer: the effective (projected) weight
// plus the latent(s) behind it for histogramming.
struct WeightSnapshot {
    int epoch = 0;
    std::vector<std::string> layer_names;                 // forward order
    std::map<std::string, Tensor> effective;              // discrete / fp32 weights
    std::map<std::string, Tensor> latent;                 // pre-quantizer values
    std::map<std::string, bool> discrete;                 // false for fp32 layers
};

WeightSnapshot take_snapshot(Model& model, int epoch);

// Fraction of positions whose three-state sign {-1, 0, +1} changed between
// two snapshots of one layer. Zero is its own state.
double wsvr(const WeightSnapshot& prev, const WeightSnapshot& next, const std::string& layer);
double wsvr_tensors(const Tensor& prev, const Tensor& next);

// Continuous mode: normalize by max|w| of the layer and count |w_hat| <= tau
// (an all-zero layer counts as 1). Discrete mode: exact-zero fraction.
double wlvr(const WeightSnapshot& snap, const std::string& layer, float tau = 0.02f);
double wlvr_continuous(const Tensor& w, float tau = 0.02f);
double wlvr_discrete(const Tensor& w);

struct Histogram {
    std::vector<double> bin_centers;
    std::vector<double> density;  // fractions, sums to 1
    double lo = 0.0, hi = 0.0;
};

Histogram weight_histogram(const Tensor& w, int bins);
Histogram weight_histogram(const WeightSnapshot& snap, const std::string& layer, int bins);
// local maxima strictly above both neighbours, for the bimodality check
std::vector<int> histogram_peaks(const Histogram& h);

// Spearman rank correlation with average ranks for ties; 0 when either side
// is constant.
double spearman(const std::vector<double>& xs, const std::vector<double>& ys);

struct DynamicsRecord {
    std::vector<int> epochs;
    std::vector<std::string> layers;
    // series[layer] aligned with epochs; wsvr has no entry for the first snapshot
    std::map<std::string, std::vector<double>> wsvr_series;
    std::map<std::string, std::vector<double>> wlvr_series;

    void add_snapshot(const WeightSnapshot& snap, const WeightSnapshot* prev);
};

struct TrendStats {
    double wsvr_mean = 0.0;
    double wlvr_spearman = 0.0;
};

// Requires at least 3 snapshots; wsvr_mean averages all transitions of all
// layers, wlvr_spearman averages the per-layer rank correlation vs epoch.
TrendStats trend_stats(const DynamicsRecord& record);

void write_metrics_csv(const std::string& path, const DynamicsRecord& record);
DynamicsRecord read_metrics_csv(const std::string& path);
void write_histogram_json(const std::string& path, const WeightSnapshot& snap, int bins);

}  // namespace shiftforge
