#include "vpr/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace vpr {

double geo_distance(const Coordinate& x, const Coordinate& y) {
    if (x.convention != y.convention)
        throw DomainError("geo_distance: mixed coordinate conventions");
    if (x.convention == CoordConvention::utm) {
        const double da = x.a - y.a;
        const double db = x.b - y.b;
        return std::sqrt(da * da + db * db);
    }
    // Haversine on a sphere of radius 6371000 m; coordinates in degrees.
    constexpr double kRadius = 6371000.0;
    constexpr double kDeg = 0.017453292519943295;  // pi / 180
    const double lat1 = x.a * kDeg, lon1 = x.b * kDeg;
    const double lat2 = y.a * kDeg, lon2 = y.b * kDeg;
    const double sdlat = std::sin((lat2 - lat1) / 2.0);
    const double sdlon = std::sin((lon2 - lon1) / 2.0);
    const double h = sdlat * sdlat + std::cos(lat1) * std::cos(lat2) * sdlon * sdlon;
    return 2.0 * kRadius * std::asin(std::min(1.0, std::sqrt(h)));
}

DescriptorIndex DescriptorIndex::build(const std::vector<RecordId>& ids,
                                       const Eigen::MatrixXd& rows) {
    if (static_cast<Eigen::Index>(ids.size()) != rows.rows())
        throw DimensionError("descriptor index: id/row count mismatch");
    std::set<RecordId> seen(ids.begin(), ids.end());
    if (seen.size() != ids.size())
        throw DomainError("descriptor index: duplicate record ids");
    DescriptorIndex index;
    index.ids_ = ids;
    index.vectors_ = rows;
    return index;
}

DescriptorIndex DescriptorIndex::from_db(const DescriptorDb& db) {
    return build(db.ids, db.vectors);
}

std::vector<std::pair<RecordId, double>> DescriptorIndex::knn(const Eigen::VectorXd& query,
                                                              int k) const {
    if (k < 1) throw ParameterError("knn: k must be >= 1");
    if (ids_.empty()) throw DomainError("knn: empty index");
    if (query.size() != vectors_.cols())
        throw DimensionError("knn: query length " + std::to_string(query.size()) +
                             " does not match index dim " + std::to_string(vectors_.cols()));
    const std::size_t n = ids_.size();
    std::vector<std::pair<double, RecordId>> scored(n);
    for (std::size_t r = 0; r < n; ++r) {
        const double d = (vectors_.row(static_cast<Eigen::Index>(r)).transpose() - query).norm();
        scored[r] = {d, ids_[r]};
    }
    const std::size_t kk = std::min<std::size_t>(static_cast<std::size_t>(k), n);
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(kk),
                      scored.end());
    std::vector<std::pair<RecordId, double>> out;
    out.reserve(kk);
    for (std::size_t i = 0; i < kk; ++i) out.emplace_back(scored[i].second, scored[i].first);
    return out;
}

EvalResult recall_at_n(const DescriptorIndex& index,
                       const std::map<RecordId, Coordinate>& gallery_coords,
                       const std::vector<QueryRecord>& queries,
                       double positive_radius_m, const std::vector<int>& ns) {
    if (index.size() == 0) throw DomainError("recall_at_n: empty gallery");
    for (RecordId id : index.ids())
        if (!gallery_coords.count(id))
            throw DomainError("recall_at_n: no coordinate for gallery record " +
                              std::to_string(id));

    EvalResult result;
    std::vector<int> hits(ns.size(), 0);

    // Deterministic merge order regardless of input order.
    std::vector<const QueryRecord*> ordered;
    for (const auto& q : queries) ordered.push_back(&q);
    std::sort(ordered.begin(), ordered.end(),
              [](const QueryRecord* a, const QueryRecord* b) { return a->id < b->id; });

    for (const QueryRecord* q : ordered) {
        bool has_positive = false;
        for (RecordId gid : index.ids()) {
            if (geo_distance(gallery_coords.at(gid), q->coord) <= positive_radius_m) {
                has_positive = true;
                break;
            }
        }
        if (!has_positive) {
            ++result.excluded_queries;
            continue;
        }
        auto ranking = index.knn(q->descriptor, static_cast<int>(index.size()));
        int first_rank = -1;
        for (std::size_t r = 0; r < ranking.size(); ++r) {
            if (geo_distance(gallery_coords.at(ranking[r].first), q->coord) <=
                positive_radius_m) {
                first_rank = static_cast<int>(r) + 1;
                break;
            }
        }
        result.first_positive_rank.push_back(first_rank);
        result.evaluated_queries.push_back(q->id);
        ++result.query_count;
        for (std::size_t i = 0; i < ns.size(); ++i)
            if (first_rank >= 1 && first_rank <= ns[i]) ++hits[i];
    }

    for (std::size_t i = 0; i < ns.size(); ++i)
        result.recall[ns[i]] =
            result.query_count > 0
                ? static_cast<double>(hits[i]) / static_cast<double>(result.query_count)
                : 0.0;
    return result;
}

}  // namespace vpr
