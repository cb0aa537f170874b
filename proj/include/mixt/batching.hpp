#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "mixt/common.hpp"
#include "mixt/rng.hpp"

namespace mixt {

// How many context examples to prepend per training iteration: either a
// fixed count or a count drawn uniformly from a set each iteration.
struct ShotPolicy {
    enum class Kind { fixed, uniform };

    Kind kind = Kind::fixed;
    int n = 0;
    std::vector<int> set;

    static ShotPolicy make_fixed(int n) {
        if (n < 0) fail("shot count must be non-negative, got ", n);
        ShotPolicy p;
        p.kind = Kind::fixed;
        p.n = n;
        return p;
    }

    static ShotPolicy make_uniform(std::vector<int> set) {
        require(!set.empty(), "uniform shot policy needs a non-empty set");
        for (int s : set)
            if (s < 0) fail("shot count must be non-negative, got ", s);
        ShotPolicy p;
        p.kind = Kind::uniform;
        p.set = std::move(set);
        return p;
    }

    int max_shots() const {
        if (kind == Kind::fixed) return n;
        return *std::max_element(set.begin(), set.end());
    }

    std::string to_string() const {
        if (kind == Kind::fixed) return "fixed:" + std::to_string(n);
        std::string out = "uniform:";
        for (size_t i = 0; i < set.size(); ++i) {
            if (i) out += ',';
            out += std::to_string(set[i]);
        }
        return out;
    }
};

// Parses "fixed:N" or "uniform:a,b,c".
inline ShotPolicy parse_shot_policy(const std::string& text) {
    const auto colon = text.find(':');
    if (colon == std::string::npos)
        fail("bad shot policy \"", text, "\": expected fixed:N or uniform:a,b,c");
    const std::string kind = text.substr(0, colon);
    const std::string rest = text.substr(colon + 1);
    auto parse_int = [&](const std::string& part) {
        if (part.empty() || part.find_first_not_of("0123456789") != std::string::npos)
            fail("bad shot policy \"", text, "\": \"", part, "\" is not a count");
        return std::stoi(part);
    };
    if (kind == "fixed") return ShotPolicy::make_fixed(parse_int(rest));
    if (kind == "uniform") {
        std::vector<int> set;
        size_t start = 0;
        while (start <= rest.size()) {
            const auto comma = rest.find(',', start);
            const auto end = comma == std::string::npos ? rest.size() : comma;
            set.push_back(parse_int(rest.substr(start, end - start)));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        return ShotPolicy::make_uniform(std::move(set));
    }
    fail("bad shot policy \"", text, "\": unknown kind \"", kind, "\"");
}

// Shot count for one iteration.
inline int sample_shots_count(const ShotPolicy& policy, Rng& rng) {
    if (policy.kind == ShotPolicy::Kind::fixed) return policy.n;
    return policy.set[static_cast<size_t>(rng.next_below(static_cast<uint64_t>(policy.set.size())))];
}

// Shot count for a numbered training step, derived functionally from the run
// seed so resumed and uninterrupted runs draw identical counts.
inline int shots_for_step(const ShotPolicy& policy, uint64_t seed, int step) {
    Rng rng = derived_rng(seed, "shots", static_cast<uint64_t>(step));
    return sample_shots_count(policy, rng);
}

// Draws n distinct pool indices uniformly at random, never returning
// exclude_index (pass -1 to exclude nothing). Partial Fisher-Yates over the
// candidate list, so the draw is exactly uniform without replacement.
inline std::vector<int> sample_context_indices(int pool_size, int exclude_index, int n, Rng& rng) {
    require(pool_size >= 0, "pool size must be non-negative");
    require(n >= 0, "context count must be non-negative");
    std::vector<int> candidates;
    candidates.reserve(static_cast<size_t>(pool_size));
    for (int i = 0; i < pool_size; ++i)
        if (i != exclude_index) candidates.push_back(i);
    if (static_cast<int>(candidates.size()) < n)
        fail("context pool too small: need ", n, " examples but only ", candidates.size(),
             " are available (pool ", pool_size,
             exclude_index >= 0 && exclude_index < pool_size ? " minus the query itself)" : ")");
    for (int k = 0; k < n; ++k) {
        const int j = k + static_cast<int>(rng.next_below(
                              static_cast<uint64_t>(candidates.size() - static_cast<size_t>(k))));
        std::swap(candidates[k], candidates[j]);
    }
    candidates.resize(static_cast<size_t>(n));
    return candidates;
}

// Draws a shot count per the policy, then that many context indices from the
// pool, excluding the query itself.
inline std::vector<int> sample_shots(const ShotPolicy& policy, int pool_size, int query_index,
                                     Rng& rng) {
    const int n = sample_shots_count(policy, rng);
    return sample_context_indices(pool_size, query_index, n, rng);
}

// Task-heterogeneous batch order: each epoch globally reshuffles the dataset
// (Fisher-Yates seeded functionally from the run seed and epoch number) and
// cuts it into consecutive full batches; a trailing partial batch is dropped.
class BatchPlanner {
  public:
    BatchPlanner(int dataset_size, int batch_size, uint64_t seed)
        : dataset_size_(dataset_size), batch_size_(batch_size), seed_(seed) {
        require(dataset_size >= 1, "dataset is empty");
        require(batch_size >= 1, "batch_size must be at least 1");
        if (batch_size > dataset_size)
            fail("batch_size ", batch_size, " exceeds dataset size ", dataset_size);
    }

    int batches_per_epoch() const { return dataset_size_ / batch_size_; }
    int dataset_size() const { return dataset_size_; }
    int batch_size() const { return batch_size_; }

    // Shuffled dataset order for one epoch.
    std::vector<int> epoch_order(int epoch) const {
        std::vector<int> order(static_cast<size_t>(dataset_size_));
        for (int i = 0; i < dataset_size_; ++i) order[static_cast<size_t>(i)] = i;
        Rng rng = derived_rng(seed_, "epoch", static_cast<uint64_t>(epoch));
        for (int i = dataset_size_ - 1; i >= 1; --i) {
            const int j = static_cast<int>(rng.next_below(static_cast<uint64_t>(i) + 1));
            std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
        }
        return order;
    }

    // Dataset indices of one batch, addressed by global step number.
    std::vector<int> batch_at(int step) const {
        require(step >= 0, "step must be non-negative");
        const int epoch = step / batches_per_epoch();
        const int slot = step % batches_per_epoch();
        if (epoch != cached_epoch_) {
            cached_order_ = epoch_order(epoch);
            cached_epoch_ = epoch;
        }
        const auto begin = cached_order_.begin() + static_cast<size_t>(slot) *
                                                       static_cast<size_t>(batch_size_);
        return std::vector<int>(begin, begin + batch_size_);
    }

  private:
    int dataset_size_;
    int batch_size_;
    uint64_t seed_;
    mutable int cached_epoch_ = -1;
    mutable std::vector<int> cached_order_;
};

}  // namespace mixt
