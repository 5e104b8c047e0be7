#pragma once

#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "drme/nnet.hpp"

namespace drme {

/// One stream element. `task` is the latent task id; learners never read it.
struct Sample {
    Vector x;
    int y = 0;
    int task = 0;
};

/// Fixed-capacity replay memory maintained by reservoir sampling.
///
/// Holds raw stream data only. The buffer owns its own RNG so that retrieval
/// and storage decisions are the same across runs that differ only in how
/// replayed samples are used.
class MemoryBuffer {
public:
    explicit MemoryBuffer(std::size_t capacity, std::uint64_t seed = 0) : capacity_(capacity), rng_(seed) {
        items_.reserve(capacity);
    }

    std::size_t capacity() const { return capacity_; }
    std::size_t size() const { return items_.size(); }
    bool empty() const { return items_.empty(); }
    std::uint64_t seen() const { return seen_; }
    const std::vector<Sample>& items() const { return items_; }

    void reservoir_update(const Sample& sample) {
        ++seen_;
        if (items_.size() < capacity_) {
            items_.push_back(sample);
            return;
        }
        if (capacity_ == 0) return;
        // keep with probability N / seen, replacing a uniform slot
        std::uniform_int_distribution<std::uint64_t> pick(0, seen_ - 1);
        const std::uint64_t j = pick(rng_);
        if (j < capacity_) items_[j] = sample;
    }

    void reservoir_update(const Batch& batch) {
        for (Index i = 0; i < batch.size(); ++i)
            reservoir_update(Sample{batch.inputs.row(i).transpose(), batch.labels[std::size_t(i)],
                                    batch.tasks.empty() ? 0 : batch.tasks[std::size_t(i)]});
    }

    /// min(b, size()) distinct stored samples, uniformly without replacement.
    /// Returns copies; an empty buffer yields an empty batch.
    Batch sample_minibatch(std::size_t b) {
        const std::size_t n = items_.size();
        const std::size_t m = std::min(b, n);
        Batch out;
        const Index dim = n == 0 ? 0 : items_.front().x.size();
        out.inputs.resize(Index(m), dim);
        out.labels.resize(m);
        out.tasks.resize(m);
        if (m == 0) return out;
        // partial Fisher-Yates over an index permutation
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        for (std::size_t i = 0; i < m; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, n - 1);
            std::swap(idx[i], idx[pick(rng_)]);
            const Sample& s = items_[idx[i]];
            out.inputs.row(Index(i)) = s.x.transpose();
            out.labels[i] = s.y;
            out.tasks[i] = s.task;
        }
        return out;
    }

private:
    std::size_t capacity_;
    std::vector<Sample> items_;
    std::uint64_t seen_ = 0;
    std::mt19937_64 rng_;
};

}  // namespace drme
