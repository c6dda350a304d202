#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>

#include "vpr/dataset.hpp"
#include "vpr/model.hpp"

namespace vpr {

// Per-record descriptor vectors refreshed between mining rounds. All cached
// vectors have the same length; the generation counter increments exactly at
// refresh. Refresh needs exclusive access; mining only reads.
class DescriptorCache {
public:
    void put(RecordId id, Eigen::VectorXd v);
    const Eigen::VectorXd& get(RecordId id) const;
    bool contains(RecordId id) const { return vectors_.count(id) > 0; }
    std::size_t size() const { return vectors_.size(); }
    std::int64_t generation() const { return generation_; }
    void bump_generation() { ++generation_; }
    void clear_vectors() { vectors_.clear(); }
    const std::map<RecordId, Eigen::VectorXd>& vectors() const { return vectors_; }

private:
    std::map<RecordId, Eigen::VectorXd> vectors_;
    std::int64_t generation_ = 0;
};

struct MiningPolicy {
    double positive_radius_m = 10.0;
    double negative_exclusion_radius_m = 25.0;
    int negatives_per_query = 1;
    int cache_refresh_every = 100;

    void validate() const {
        if (!(positive_radius_m > 0.0))
            throw ParameterError("mining: positive radius must be positive");
        if (negative_exclusion_radius_m < positive_radius_m)
            throw ParameterError("mining: exclusion radius must be >= positive radius");
        if (negatives_per_query != 1)
            throw ParameterError("mining: exactly one negative per query is supported");
        if (cache_refresh_every < 1)
            throw ParameterError("mining: cache_refresh_every must be >= 1");
    }
};

struct Triplet {
    RecordId query_id = 0;
    RecordId pos_id = 0;
    RecordId neg_id = 0;
    double d_pos = 0.0;  // descriptor distances at mining time
    double d_neg = 0.0;
};

// Weakly supervised triplet construction: the positive is the cached-
// descriptor-nearest gallery record within positive_radius of the query; the
// negative is the descriptor-nearest record beyond the exclusion radius.
// Ties break toward the lower record id. Throws QueryUnusable when either
// set is empty. Deterministic given (manifest, cache generation, seed).
Triplet mine_triplet(RecordId query_id, const DatasetManifest& manifest,
                     const DescriptorCache& cache, const MiningPolicy& policy,
                     std::uint64_t rng_seed);

// Recomputes every mining-pool descriptor with the current parameters and
// increments the generation counter.
void refresh_cache(const VprModel& model, const DatasetManifest& manifest,
                   DescriptorCache& cache);

}  // namespace vpr
