#pragma once

#include <Eigen/Dense>
#include <map>
#include <vector>

#include "vpr/geo.hpp"
#include "vpr/serialize.hpp"

namespace vpr {

// Immutable gallery of descriptors. Exact brute-force search only; ties in
// distance break toward the lower record id.
class DescriptorIndex {
public:
    DescriptorIndex() = default;
    static DescriptorIndex build(const std::vector<RecordId>& ids,
                                 const Eigen::MatrixXd& rows);
    static DescriptorIndex from_db(const DescriptorDb& db);

    std::size_t size() const { return ids_.size(); }
    Eigen::Index dim() const { return vectors_.cols(); }
    const std::vector<RecordId>& ids() const { return ids_; }
    const Eigen::MatrixXd& vectors() const { return vectors_; }

    // Exact k smallest Euclidean distances, ascending.
    std::vector<std::pair<RecordId, double>> knn(const Eigen::VectorXd& query, int k) const;

private:
    std::vector<RecordId> ids_;
    Eigen::MatrixXd vectors_;
};

struct QueryRecord {
    RecordId id;
    Eigen::VectorXd descriptor;
    Coordinate coord;
};

struct EvalResult {
    std::map<int, double> recall;            // N → fraction
    std::vector<int> first_positive_rank;    // 1-based rank per evaluated query
    std::vector<RecordId> evaluated_queries; // aligned with first_positive_rank
    int query_count = 0;                     // evaluated (has >= 1 geo positive)
    int excluded_queries = 0;                // no geo positive in the gallery
};

// The 25 m Recall@N protocol: a retrieved gallery record counts as positive
// when it lies within positive_radius_m of the query. Queries with no
// geographic positive are excluded from the denominator and counted.
EvalResult recall_at_n(const DescriptorIndex& index,
                       const std::map<RecordId, Coordinate>& gallery_coords,
                       const std::vector<QueryRecord>& queries,
                       double positive_radius_m = 25.0,
                       const std::vector<int>& ns = {1, 5, 10});

}  // namespace vpr
