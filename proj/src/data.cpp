#include "shiftforge/data.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace shiftforge {

namespace {

uint32_t read_be32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw IoError("unexpected end of IDX header");
    return (static_cast<uint32_t>(b[0]) << 24) | (static_cast<uint32_t>(b[1]) << 16) |
           (static_cast<uint32_t>(b[2]) << 8) | b[3];
}

std::string find_existing(const std::string& dir, const std::vector<std::string>& names) {
    for (const std::string& n : names) {
        std::filesystem::path p = std::filesystem::path(dir) / n;
        if (std::filesystem::exists(p)) return p.string();
    }
    throw IoError("no dataset file found under '" + dir + "' (tried " + names.front() + ")");
}

std::vector<uint8_t> read_idx_images(const std::string& path, uint32_t& count, uint32_t& rows,
                                     uint32_t& cols) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path + "'");
    uint32_t magic = read_be32(is);
    if (magic != 0x00000803)
        throw IoError("'" + path + "' is not an IDX image file (magic " + std::to_string(magic) + ")");
    count = read_be32(is);
    rows = read_be32(is);
    cols = read_be32(is);
    std::vector<uint8_t> pixels(static_cast<size_t>(count) * rows * cols);
    is.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
    if (!is || is.gcount() != static_cast<std::streamsize>(pixels.size()))
        throw IoError("'" + path + "' is truncated");
    return pixels;
}

std::vector<uint8_t> read_idx_labels(const std::string& path, uint32_t& count) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path + "'");
    uint32_t magic = read_be32(is);
    if (magic != 0x00000801)
        throw IoError("'" + path + "' is not an IDX label file (magic " + std::to_string(magic) + ")");
    count = read_be32(is);
    std::vector<uint8_t> labels(count);
    is.read(reinterpret_cast<char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
    if (!is || is.gcount() != static_cast<std::streamsize>(labels.size()))
        throw IoError("'" + path + "' is truncated");
    return labels;
}

void normalize_per_channel(Dataset& ds, const std::vector<float>* mean = nullptr,
                           const std::vector<float>* stddev = nullptr) {
    size_t plane = static_cast<size_t>(ds.height) * ds.width;
    size_t img = ds.image_size();
    if (mean && stddev) {
        ds.mean = *mean;
        ds.stddev = *stddev;
    } else {
        ds.mean.assign(static_cast<size_t>(ds.channels), 0.0f);
        ds.stddev.assign(static_cast<size_t>(ds.channels), 0.0f);
        for (int c = 0; c < ds.channels; ++c) {
            double s = 0.0;
            for (size_t i = 0; i < ds.count; ++i) {
                const float* p = ds.images.data() + i * img + static_cast<size_t>(c) * plane;
                for (size_t k = 0; k < plane; ++k) s += p[k];
            }
            double mu = s / (static_cast<double>(ds.count) * plane);
            double v = 0.0;
            for (size_t i = 0; i < ds.count; ++i) {
                const float* p = ds.images.data() + i * img + static_cast<size_t>(c) * plane;
                for (size_t k = 0; k < plane; ++k) v += (p[k] - mu) * (p[k] - mu);
            }
            ds.mean[static_cast<size_t>(c)] = static_cast<float>(mu);
            ds.stddev[static_cast<size_t>(c)] = static_cast<float>(
                std::sqrt(v / (static_cast<double>(ds.count) * plane)) + 1e-8);
        }
    }
    for (int c = 0; c < ds.channels; ++c) {
        float mu = ds.mean[static_cast<size_t>(c)];
        float inv = 1.0f / ds.stddev[static_cast<size_t>(c)];
        for (size_t i = 0; i < ds.count; ++i) {
            float* p = ds.images.data() + i * img + static_cast<size_t>(c) * plane;
            for (size_t k = 0; k < plane; ++k) p[k] = (p[k] - mu) * inv;
        }
    }
}

Dataset load_mnist_raw(const std::string& dir, bool train) {
    std::string img_path = find_existing(
        dir, train ? std::vector<std::string>{"train-images-idx3-ubyte", "train-images.idx3-ubyte"}
                   : std::vector<std::string>{"t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"});
    std::string lbl_path = find_existing(
        dir, train ? std::vector<std::string>{"train-labels-idx1-ubyte", "train-labels.idx1-ubyte"}
                   : std::vector<std::string>{"t10k-labels-idx1-ubyte", "t10k-labels.idx1-ubyte"});
    uint32_t n = 0, rows = 0, cols = 0, nl = 0;
    std::vector<uint8_t> pixels = read_idx_images(img_path, n, rows, cols);
    std::vector<uint8_t> labels = read_idx_labels(lbl_path, nl);
    if (n != nl) throw IoError("image/label counts differ in '" + dir + "'");
    Dataset ds;
    ds.name = train ? "mnist-train" : "mnist-test";
    ds.channels = 1;
    ds.height = static_cast<int>(rows);
    ds.width = static_cast<int>(cols);
    ds.count = n;
    ds.images.resize(pixels.size());
    for (size_t i = 0; i < pixels.size(); ++i) ds.images[i] = pixels[i] / 255.0f;
    ds.labels.assign(labels.begin(), labels.end());
    for (int l : ds.labels)
        if (l < 0 || l > 9) throw IoError("mnist label out of range in '" + dir + "'");
    return ds;
}

Dataset load_cifar_raw(const std::string& dir, bool train) {
    std::vector<std::string> files;
    if (train)
        for (int i = 1; i <= 5; ++i) files.push_back("data_batch_" + std::to_string(i) + ".bin");
    else
        files.push_back("test_batch.bin");
    Dataset ds;
    ds.name = train ? "cifar10-train" : "cifar10-test";
    ds.channels = 3;
    ds.height = 32;
    ds.width = 32;
    const size_t rec = 1 + 3072;
    for (const std::string& f : files) {
        std::filesystem::path p = std::filesystem::path(dir) / f;
        std::ifstream is(p, std::ios::binary);
        if (!is) throw IoError("cannot open '" + p.string() + "'");
        is.seekg(0, std::ios::end);
        auto len = static_cast<size_t>(is.tellg());
        is.seekg(0);
        if (len == 0 || len % rec != 0)
            throw IoError("'" + p.string() + "' has invalid size " + std::to_string(len));
        size_t n = len / rec;
        std::vector<uint8_t> buf(len);
        is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(len));
        if (!is) throw IoError("'" + p.string() + "' is truncated");
        for (size_t i = 0; i < n; ++i) {
            const uint8_t* r = buf.data() + i * rec;
            if (r[0] > 9) throw IoError("cifar label out of range in '" + p.string() + "'");
            ds.labels.push_back(r[0]);
            for (size_t k = 0; k < 3072; ++k) ds.images.push_back(r[1 + k] / 255.0f);
        }
        ds.count += n;
    }
    return ds;
}

}  // namespace

DatasetKind dataset_kind_from_string(const std::string& s, int* subset_n) {
    if (subset_n) *subset_n = 0;
    if (s == "mnist") return DatasetKind::Mnist;
    if (s == "cifar10") return DatasetKind::Cifar10;
    if (s.rfind("cifar10_subset", 0) == 0) {
        int n = 5000;
        auto open_paren = s.find('(');
        if (open_paren != std::string::npos) {
            auto close_paren = s.find(')', open_paren);
            if (close_paren == std::string::npos)
                throw ConfigError("malformed dataset '" + s + "'");
            n = std::stoi(s.substr(open_paren + 1, close_paren - open_paren - 1));
        }
        if (n <= 0) throw ConfigError("cifar10_subset size must be positive");
        if (subset_n) *subset_n = n;
        return DatasetKind::Cifar10Subset;
    }
    throw ConfigError("unknown dataset '" + s + "' (expected mnist|cifar10|cifar10_subset(n))");
}

Dataset load_mnist(const std::string& dir, bool train) {
    Dataset ds = load_mnist_raw(dir, train);
    if (train) {
        normalize_per_channel(ds);
    } else {
        Dataset tr = load_mnist_raw(dir, true);
        normalize_per_channel(tr);
        normalize_per_channel(ds, &tr.mean, &tr.stddev);
    }
    return ds;
}

Dataset load_cifar10(const std::string& dir, bool train, int subset_n) {
    Dataset ds = load_cifar_raw(dir, train);
    Dataset tr = train ? ds : load_cifar_raw(dir, true);
    // stats from the (full) train split, before any subsetting
    normalize_per_channel(tr);
    if (train)
        ds = tr;
    else
        normalize_per_channel(ds, &tr.mean, &tr.stddev);
    if (train && subset_n > 0 && static_cast<size_t>(subset_n) < ds.count) {
        ds.count = static_cast<size_t>(subset_n);
        ds.images.resize(ds.count * ds.image_size());
        ds.labels.resize(ds.count);
        ds.name += "-subset" + std::to_string(subset_n);
    }
    ds.augment = train;
    return ds;
}

Dataset load_dataset(DatasetKind kind, bool train, const std::string& dir, int subset_n) {
    switch (kind) {
        case DatasetKind::Mnist: return load_mnist(dir, train);
        case DatasetKind::Cifar10: return load_cifar10(dir, train, 0);
        case DatasetKind::Cifar10Subset: return load_cifar10(dir, train, train ? subset_n : 0);
    }
    throw ConfigError("unknown dataset kind");
}

bool dataset_present(DatasetKind kind, const std::string& dir) {
    namespace fs = std::filesystem;
    auto any = [&](const std::vector<std::string>& names) {
        for (const std::string& n : names)
            if (fs::exists(fs::path(dir) / n)) return true;
        return false;
    };
    if (kind == DatasetKind::Mnist)
        return any({"train-images-idx3-ubyte", "train-images.idx3-ubyte"}) &&
               any({"t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"});
    return any({"data_batch_1.bin"}) && any({"test_batch.bin"});
}

Tensor make_batch(const Dataset& ds, const std::vector<size_t>& indices, Rng* rng,
                  std::vector<int>& labels_out) {
    int B = static_cast<int>(indices.size());
    if (B == 0) throw ConfigError("empty batch");
    Tensor batch = Tensor::zeros({B, ds.channels, ds.height, ds.width});
    labels_out.resize(indices.size());
    size_t img = ds.image_size();
    size_t plane = static_cast<size_t>(ds.height) * ds.width;
    const int pad = 4;
    for (int b = 0; b < B; ++b) {
        size_t idx = indices[static_cast<size_t>(b)];
        if (idx >= ds.count) throw IndexError("batch index out of range");
        labels_out[static_cast<size_t>(b)] = ds.labels[idx];
        const float* src = ds.images.data() + idx * img;
        float* dst = batch.ptr() + static_cast<size_t>(b) * img;
        if (!ds.augment || !rng) {
            std::memcpy(dst, src, img * sizeof(float));
            continue;
        }
        // 4-pixel zero pad, random crop back to full size, random horizontal flip
        int dy = static_cast<int>(rng->index(2 * pad + 1)) - pad;
        int dx = static_cast<int>(rng->index(2 * pad + 1)) - pad;
        bool flip = rng->index(2) == 1;
        for (int c = 0; c < ds.channels; ++c) {
            const float* sp = src + static_cast<size_t>(c) * plane;
            float* dp = dst + static_cast<size_t>(c) * plane;
            for (int y = 0; y < ds.height; ++y) {
                int sy = y + dy;
                for (int x = 0; x < ds.width; ++x) {
                    int sx = flip ? ds.width - 1 - x + dx : x + dx;
                    float v = 0.0f;
                    if (sy >= 0 && sy < ds.height && sx >= 0 && sx < ds.width)
                        v = sp[static_cast<size_t>(sy) * ds.width + sx];
                    dp[static_cast<size_t>(y) * ds.width + x] = v;
                }
            }
        }
    }
    return batch;
}

}  // namespace shiftforge
