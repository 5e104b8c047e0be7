#pragma once

// Task-free streams: tasks arrive one after another as a single pass of
// minibatches. Each sample keeps its latent task id for evaluation only.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "drme/errors.hpp"
#include "drme/memory.hpp"
#include "drme/nnet.hpp"

namespace drme {

enum class StreamSource { Synthetic, Idx };

struct IdxPaths {
    std::string train_images;
    std::string train_labels;
    // Optional; when empty, 20% of each task's training data is held out.
    std::string test_images;
    std::string test_labels;
};

struct StreamSpec {
    StreamSource source = StreamSource::Synthetic;
    int tasks = 5;
    int classes_per_task = 2;
    /// Samples per task before the train/test split. For IDX sources, 0 keeps all.
    int samples_per_task = 1000;
    int batch_size = 10;
    std::uint64_t seed = 0;
    // synthetic
    int dim = 16;
    double mean_spread = 1.0;
    double noise_sigma = 1.0;
    // idx
    IdxPaths idx;

    int num_classes() const { return tasks * classes_per_task; }

    void validate() const {
        if (tasks < 1) throw ConfigError("stream.tasks must be >= 1");
        if (classes_per_task < 1) throw ConfigError("stream.classes_per_task must be >= 1");
        if (batch_size < 1) throw ConfigError("stream.batch_size must be >= 1");
        if (samples_per_task < 0) throw ConfigError("stream.samples_per_task must be >= 0");
        if (source == StreamSource::Synthetic) {
            if (samples_per_task < 5) throw ConfigError("stream.samples_per_task must be >= 5 for synthetic streams");
            if (dim < 1) throw ConfigError("stream.dim must be >= 1");
            if (!(noise_sigma >= 0.0) || !(mean_spread >= 0.0))
                throw ConfigError("stream.noise_sigma and stream.mean_spread must be >= 0");
        } else if (idx.train_images.empty() || idx.train_labels.empty()) {
            throw ConfigError("stream.idx needs train_images and train_labels");
        }
    }
};

struct Stream {
    std::vector<Batch> batches;   // training order
    std::vector<Batch> test_sets; // one per task
    int dim = 0;
    int num_classes = 0;

    std::size_t train_size() const {
        std::size_t n = 0;
        for (const auto& b : batches) n += std::size_t(b.size());
        return n;
    }
};

namespace detail {

inline Batch to_batch(std::span<const Sample> samples, Index dim) {
    Batch b;
    b.inputs.resize(Index(samples.size()), dim);
    b.labels.reserve(samples.size());
    b.tasks.reserve(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        b.inputs.row(Index(i)) = samples[i].x.transpose();
        b.labels.push_back(samples[i].y);
        b.tasks.push_back(samples[i].task);
    }
    return b;
}

inline std::vector<Batch> chunk(const std::vector<Sample>& samples, int batch_size, Index dim) {
    std::vector<Batch> out;
    for (std::size_t at = 0; at < samples.size(); at += std::size_t(batch_size)) {
        const std::size_t len = std::min<std::size_t>(std::size_t(batch_size), samples.size() - at);
        out.push_back(to_batch(std::span(samples).subspan(at, len), dim));
    }
    return out;
}

}  // namespace detail

/// Task of a class label under the contiguous split: task i owns labels
/// [i * classes_per_task, (i + 1) * classes_per_task).
inline int task_of_label(int label, int classes_per_task) { return label / classes_per_task; }

/// Isotropic Gaussian blob per class with a seeded mean ~ N(0, spread^2 I).
/// Each task is shuffled, then split 80/20 into train and test.
inline Stream make_synthetic_stream(const StreamSpec& spec) {
    spec.validate();
    if (spec.source != StreamSource::Synthetic) throw ConfigError("make_synthetic_stream needs a synthetic spec");
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> n01(0.0, 1.0);
    const int classes = spec.num_classes();
    const Index d = spec.dim;

    std::vector<Vector> means;
    for (int c = 0; c < classes; ++c) {
        Vector m(d);
        for (Index k = 0; k < d; ++k) m(k) = spec.mean_spread * n01(rng);
        means.push_back(std::move(m));
    }

    Stream s;
    s.dim = spec.dim;
    s.num_classes = classes;
    std::vector<Sample> train;
    for (int t = 0; t < spec.tasks; ++t) {
        std::vector<Sample> task_samples;
        for (int i = 0; i < spec.samples_per_task; ++i) {
            const int y = t * spec.classes_per_task + i % spec.classes_per_task;
            Vector x(d);
            for (Index k = 0; k < d; ++k) x(k) = means[std::size_t(y)](k) + spec.noise_sigma * n01(rng);
            task_samples.push_back({std::move(x), y, t});
        }
        std::shuffle(task_samples.begin(), task_samples.end(), rng);
        const std::size_t n_test = std::size_t(spec.samples_per_task / 5);
        const std::size_t n_train = task_samples.size() - n_test;
        train.insert(train.end(), task_samples.begin(), task_samples.begin() + std::ptrdiff_t(n_train));
        s.test_sets.push_back(
            detail::to_batch(std::span(task_samples).subspan(n_train), d));
    }
    s.batches = detail::chunk(train, spec.batch_size, d);
    return s;
}

// ---------------------------------------------------------------------------
// IDX files

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;  // 2051
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;  // 2049

struct IdxImages {
    std::uint32_t count = 0;
    std::uint32_t rows = 0;
    std::uint32_t cols = 0;
    std::vector<std::uint8_t> pixels;  // count * rows * cols, row-major
};

namespace detail {

inline std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset, const char* what) {
    if (bytes.size() < offset + 4)
        throw FormatError(std::string("truncated IDX header: missing ") + what, bytes.size());
    return std::uint32_t(bytes[offset]) << 24 | std::uint32_t(bytes[offset + 1]) << 16 |
           std::uint32_t(bytes[offset + 2]) << 8 | std::uint32_t(bytes[offset + 3]);
}

inline void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(std::uint8_t(v >> 24));
    out.push_back(std::uint8_t(v >> 16));
    out.push_back(std::uint8_t(v >> 8));
    out.push_back(std::uint8_t(v));
}

}  // namespace detail

inline IdxImages parse_idx_images(std::span<const std::uint8_t> bytes) {
    const std::uint32_t magic = detail::read_be32(bytes, 0, "magic number");
    if (magic != kIdxImagesMagic)
        throw FormatError("bad IDX image magic number " + std::to_string(magic) + ", expected 2051", 0);
    IdxImages img;
    img.count = detail::read_be32(bytes, 4, "image count");
    img.rows = detail::read_be32(bytes, 8, "row count");
    img.cols = detail::read_be32(bytes, 12, "column count");
    const std::uint64_t need = std::uint64_t(img.count) * img.rows * img.cols;
    if (bytes.size() - 16 < need)
        throw FormatError("truncated IDX image data: expected " + std::to_string(need) + " pixel bytes",
                          bytes.size());
    if (bytes.size() - 16 > need) throw FormatError("trailing bytes after IDX image data", std::size_t(16 + need));
    img.pixels.assign(bytes.begin() + 16, bytes.end());
    return img;
}

inline std::vector<std::uint8_t> parse_idx_labels(std::span<const std::uint8_t> bytes) {
    const std::uint32_t magic = detail::read_be32(bytes, 0, "magic number");
    if (magic != kIdxLabelsMagic)
        throw FormatError("bad IDX label magic number " + std::to_string(magic) + ", expected 2049", 0);
    const std::uint32_t count = detail::read_be32(bytes, 4, "label count");
    if (bytes.size() - 8 < count)
        throw FormatError("truncated IDX label data: expected " + std::to_string(count) + " labels", bytes.size());
    if (bytes.size() - 8 > count) throw FormatError("trailing bytes after IDX label data", 8 + std::size_t(count));
    return {bytes.begin() + 8, bytes.end()};
}

inline std::vector<std::uint8_t> encode_idx_images(const IdxImages& img) {
    std::vector<std::uint8_t> out;
    detail::put_be32(out, kIdxImagesMagic);
    detail::put_be32(out, img.count);
    detail::put_be32(out, img.rows);
    detail::put_be32(out, img.cols);
    out.insert(out.end(), img.pixels.begin(), img.pixels.end());
    return out;
}

inline std::vector<std::uint8_t> encode_idx_labels(std::span<const std::uint8_t> labels) {
    std::vector<std::uint8_t> out;
    detail::put_be32(out, kIdxLabelsMagic);
    detail::put_be32(out, std::uint32_t(labels.size()));
    out.insert(out.end(), labels.begin(), labels.end());
    return out;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Pixels scaled by 1/255 into [0, 1], one image per row.
inline Matrix idx_pixels_to_features(const IdxImages& img) {
    const Index d = Index(img.rows) * Index(img.cols);
    Matrix x(Index(img.count), d);
    for (Index i = 0; i < x.rows(); ++i)
        for (Index k = 0; k < d; ++k) x(i, k) = double(img.pixels[std::size_t(i * d + k)]) / 255.0;
    return x;
}

/// Labelled dataset from a pair of IDX files. Labels must agree in count with
/// the images.
inline Batch load_idx_pair(const std::string& images_path, const std::string& labels_path) {
    const auto img = parse_idx_images(read_file_bytes(images_path));
    const auto lab_bytes = read_file_bytes(labels_path);
    const auto labels = parse_idx_labels(lab_bytes);
    if (labels.size() != img.count)
        throw FormatError("label count " + std::to_string(labels.size()) + " does not match image count " +
                              std::to_string(img.count),
                          4);
    Batch b;
    b.inputs = idx_pixels_to_features(img);
    b.labels.assign(labels.begin(), labels.end());
    return b;
}

/// Split-IDX stream: classes are assigned to tasks contiguously, tasks are
/// delivered in order and shuffled within.
inline Stream make_split_stream_from_idx(const StreamSpec& spec) {
    spec.validate();
    if (spec.source != StreamSource::Idx) throw ConfigError("make_split_stream_from_idx needs an idx spec");
    const int classes = spec.num_classes();
    const Batch train_all = load_idx_pair(spec.idx.train_images, spec.idx.train_labels);
    const bool has_test = !spec.idx.test_images.empty();
    Batch test_all;
    if (has_test) {
        if (spec.idx.test_labels.empty()) throw ConfigError("stream.idx.test_images given without test_labels");
        test_all = load_idx_pair(spec.idx.test_images, spec.idx.test_labels);
        if (test_all.dim() != train_all.dim()) throw ShapeError("IDX test images differ in size from train images");
    }
    const Index d = train_all.dim();

    auto by_task = [&](const Batch& all) {
        std::vector<std::vector<Sample>> out(std::size_t(spec.tasks));
        std::vector<bool> present(std::size_t(classes), false);
        for (Index i = 0; i < all.size(); ++i) {
            const int y = all.labels[std::size_t(i)];
            if (y >= classes) continue;
            present[std::size_t(y)] = true;
            const int t = task_of_label(y, spec.classes_per_task);
            out[std::size_t(t)].push_back({all.inputs.row(i).transpose(), y, t});
        }
        for (int c = 0; c < classes; ++c)
            if (!present[std::size_t(c)]) throw ConfigError("IDX labels do not cover class " + std::to_string(c));
        return out;
    };

    std::mt19937_64 rng(spec.seed);
    auto train_tasks = by_task(train_all);
    std::vector<std::vector<Sample>> test_tasks;
    if (has_test) test_tasks = by_task(test_all);

    Stream s;
    s.dim = int(d);
    s.num_classes = classes;
    std::vector<Sample> train;
    for (int t = 0; t < spec.tasks; ++t) {
        auto& samples = train_tasks[std::size_t(t)];
        std::shuffle(samples.begin(), samples.end(), rng);
        if (spec.samples_per_task > 0 && samples.size() > std::size_t(spec.samples_per_task))
            samples.resize(std::size_t(spec.samples_per_task));
        std::size_t n_train = samples.size();
        if (has_test) {
            s.test_sets.push_back(detail::to_batch(test_tasks[std::size_t(t)], d));
        } else {
            n_train = samples.size() - samples.size() / 5;
            s.test_sets.push_back(detail::to_batch(std::span(samples).subspan(n_train), d));
        }
        train.insert(train.end(), samples.begin(), samples.begin() + std::ptrdiff_t(n_train));
    }
    s.batches = detail::chunk(train, spec.batch_size, d);
    return s;
}

inline Stream make_stream(const StreamSpec& spec) {
    return spec.source == StreamSource::Synthetic ? make_synthetic_stream(spec) : make_split_stream_from_idx(spec);
}

}  // namespace drme
