#pragma once

#include <string>
#include <vector>

#include "shiftforge/common.hpp"
#include "shiftforge/tensor.hpp"

namespace shiftforge {

// In-memory image classification split. Pixels are stored normalized
// (per-channel zero mean / unit variance computed from the train split).
struct Dataset {
    std::string name;
    int channels = 1, height = 0, width = 0;
    size_t count = 0;
    std::vector<float> images;  // count * channels * height * width
    std::vector<int> labels;
    std::vector<float> mean, stddev;  // per channel, from the train split
    bool augment = false;             // random crop + horizontal flip in batches

    size_t image_size() const {
        return static_cast<size_t>(channels) * static_cast<size_t>(height) *
               static_cast<size_t>(width);
    }
};

enum class DatasetKind { Mnist, Cifar10, Cifar10Subset };

DatasetKind dataset_kind_from_string(const std::string& s, int* subset_n);

// MNIST IDX pair (train-images-idx3-ubyte / train-labels-idx1-ubyte naming,
// raw or .idx extension). Throws IoError on missing or malformed files.
Dataset load_mnist(const std::string& dir, bool train);
// CIFAR-10 binary batches (data_batch_1..5.bin / test_batch.bin).
Dataset load_cifar10(const std::string& dir, bool train, int subset_n = 0);

// Dispatch on kind; normalization constants always come from the train split.
Dataset load_dataset(DatasetKind kind, bool train, const std::string& dir, int subset_n = 0);

// Assemble a batch as [B,C,H,W]. When ds.augment and rng is non-null, applies
// 4-pixel pad random crop plus horizontal flip.
Tensor make_batch(const Dataset& ds, const std::vector<size_t>& indices, Rng* rng,
                  std::vector<int>& labels_out);

// ---- procedural stand-in corpora, written in the exact on-disk formats ----
// Rendered digit glyphs (MNIST layout: 1x28x28 IDX files).
void write_synthetic_mnist(const std::string& dir, size_t train_n, size_t test_n, uint64_t seed);
// Rendered colour shapes (CIFAR-10 layout: 3x32x32 binary batches).
void write_synthetic_cifar(const std::string& dir, size_t train_n, size_t test_n, uint64_t seed);

// true if the standard files for the kind exist under dir
bool dataset_present(DatasetKind kind, const std::string& dir);

}  // namespace shiftforge
