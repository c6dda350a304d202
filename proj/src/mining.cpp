#include "vpr/mining.hpp"

namespace vpr {

void DescriptorCache::put(RecordId id, Eigen::VectorXd v) {
    if (!vectors_.empty() && vectors_.begin()->second.size() != v.size())
        throw DimensionError("descriptor cache: vector length mismatch");
    vectors_[id] = std::move(v);
}

const Eigen::VectorXd& DescriptorCache::get(RecordId id) const {
    auto it = vectors_.find(id);
    if (it == vectors_.end())
        throw DomainError("descriptor cache: no vector for record " + std::to_string(id));
    return it->second;
}

Triplet mine_triplet(RecordId query_id, const DatasetManifest& manifest,
                     const DescriptorCache& cache, const MiningPolicy& policy,
                     std::uint64_t /*rng_seed*/) {
    policy.validate();
    const Coordinate q_coord = manifest.coordinate(query_id);
    const Eigen::VectorXd& q_desc = cache.get(query_id);

    RecordId best_pos = 0, best_neg = 0;
    double best_pos_d = 0.0, best_neg_d = 0.0;
    bool have_pos = false, have_neg = false;

    for (RecordId gid : manifest.mining_pool_ids()) {
        if (gid == query_id) continue;
        const double geo = geo_distance(manifest.coordinate(gid), q_coord);
        const bool is_pos = geo <= policy.positive_radius_m;
        const bool is_neg = geo > policy.negative_exclusion_radius_m;
        if (!is_pos && !is_neg) continue;
        const double d = (cache.get(gid) - q_desc).norm();
        if (is_pos && (!have_pos || d < best_pos_d ||
                       (d == best_pos_d && gid < best_pos))) {
            have_pos = true;
            best_pos = gid;
            best_pos_d = d;
        }
        if (is_neg && (!have_neg || d < best_neg_d ||
                       (d == best_neg_d && gid < best_neg))) {
            have_neg = true;
            best_neg = gid;
            best_neg_d = d;
        }
    }
    if (!have_pos)
        throw QueryUnusable("query " + std::to_string(query_id) +
                            ": no gallery record within " +
                            std::to_string(policy.positive_radius_m) + " m");
    if (!have_neg)
        throw QueryUnusable("query " + std::to_string(query_id) +
                            ": no gallery record beyond " +
                            std::to_string(policy.negative_exclusion_radius_m) + " m");
    return Triplet{query_id, best_pos, best_neg, best_pos_d, best_neg_d};
}

void refresh_cache(const VprModel& model, const DatasetManifest& manifest,
                   DescriptorCache& cache) {
    cache.clear_vectors();
    for (RecordId id : manifest.mining_pool_ids()) {
        Tensor desc = model.describe(manifest.load_payload(id));  // no active graph: inference
        cache.put(id, Eigen::Map<const Eigen::VectorXd>(desc.array().data(), desc.size()));
    }
    cache.bump_generation();
}

}  // namespace vpr
