#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vpr/geo.hpp"
#include "vpr/serialize.hpp"
#include "vpr/tensor.hpp"

namespace vpr {

enum class Role { gallery, query, train };
enum class Domain { source, target };

std::string to_string(Role r);
std::string to_string(Domain d);

struct ManifestRecord {
    RecordId id = 0;
    std::string payload;  // path to a VPRT image/feature tensor, relative to the manifest
    double coord_a = 0.0;
    double coord_b = 0.0;
    Role role = Role::gallery;
    Domain domain = Domain::source;
    std::string labels;  // PGM label-map path; empty when absent

    bool has_labels() const { return !labels.empty(); }
};

// Geotagged image/feature records with gallery/query/train roles and domain
// labels. Parsed from CSV with header id,path,coord_a,coord_b,role,domain[,labels].
class DatasetManifest {
public:
    static DatasetManifest load(const std::string& path,
                                CoordConvention convention = CoordConvention::utm);
    void save(const std::string& path) const;

    const std::vector<ManifestRecord>& records() const { return records_; }
    const ManifestRecord& record(RecordId id) const;
    bool contains(RecordId id) const { return index_.count(id) > 0; }
    std::size_t size() const { return records_.size(); }
    bool empty() const { return records_.empty(); }

    Coordinate coordinate(RecordId id) const;
    CoordConvention convention() const { return convention_; }

    // Paths in the CSV are relative to the manifest file's directory.
    std::string resolve(const std::string& relative) const;
    Tensor load_payload(RecordId id) const;

    std::vector<RecordId> ids_with(Role role) const;
    std::vector<RecordId> ids_with(Role role, Domain domain) const;
    std::vector<RecordId> ids_with(Domain domain) const;
    // The mining pool: source-domain records usable as a training gallery.
    std::vector<RecordId> mining_pool_ids() const;

    void add(ManifestRecord rec);  // validates invariants incrementally
    void set_convention(CoordConvention c) { convention_ = c; }
    void set_base_dir(const std::string& dir) { base_dir_ = dir; }

private:
    std::vector<ManifestRecord> records_;
    std::map<RecordId, std::size_t> index_;
    CoordConvention convention_ = CoordConvention::utm;
    std::string base_dir_ = ".";
};

// H×W per-pixel class ids in [0, num_classes) plus 255 for unlabeled.
struct LabelMap {
    int h = 0;
    int w = 0;
    std::vector<std::uint8_t> ids;
};

LabelMap load_label_map(const std::string& path, int num_classes = 17);
void save_label_map(const std::string& path, const LabelMap& map);
// 8-bit grayscale PGM writer shared with the attention-map dump.
void save_pgm(const std::string& path, int h, int w, const std::vector<std::uint8_t>& bytes);

// Desk-scale synthetic dataset: P places far apart, V views per place close
// together, blob-structured semantic labels, and a target-domain copy of each
// source view offset by an additive shift of magnitude sigma.
struct FixtureSpec {
    std::uint64_t seed = 0;
    int places = 32;
    int views_per_place = 4;
    int channels = 3;
    int height = 32;
    int width = 32;
    double sigma = 0.3;        // domain-shift magnitude (RMS of the additive shift)
    double view_noise = 0.25;  // per-view pixel noise
    int view_jitter_px = 2;    // per-view translation of the place pattern
    int num_classes = 17;
};

struct FixtureResult {
    std::string manifest_path;
    int source_records = 0;
    int target_records = 0;
    int label_maps = 0;
};

FixtureResult generate_fixture(const FixtureSpec& spec, const std::string& out_dir);

}  // namespace vpr
