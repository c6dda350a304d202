#include "vpr/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "vpr/rng.hpp"

namespace fs = std::filesystem;

namespace vpr {

std::string to_string(Role r) {
    switch (r) {
        case Role::gallery: return "gallery";
        case Role::query: return "query";
        case Role::train: return "train";
    }
    return "?";
}

std::string to_string(Domain d) {
    return d == Domain::source ? "source" : "target";
}

namespace {

Role parse_role(const std::string& s, int line) {
    if (s == "gallery") return Role::gallery;
    if (s == "query") return Role::query;
    if (s == "train") return Role::train;
    throw IoError("manifest line " + std::to_string(line) + ": unknown role '" + s + "'");
}

Domain parse_domain(const std::string& s, int line) {
    if (s == "source") return Domain::source;
    if (s == "target") return Domain::target;
    throw IoError("manifest line " + std::to_string(line) + ": unknown domain '" + s + "'");
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

double parse_double(const std::string& s, int line, const char* what) {
    try {
        std::size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw IoError("manifest line " + std::to_string(line) + ": bad " + what + " '" + s + "'");
    }
}

std::string format_double(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, end);
}

}  // namespace

void DatasetManifest::add(ManifestRecord rec) {
    if (index_.count(rec.id))
        throw IoError("manifest: duplicate id " + std::to_string(rec.id));
    const bool needs_labels = rec.domain == Domain::source && rec.role == Role::train;
    if (needs_labels && !rec.has_labels())
        throw IoError("manifest: source train record " + std::to_string(rec.id) +
                      " is missing a label map");
    if (!needs_labels && rec.has_labels())
        throw IoError("manifest: record " + std::to_string(rec.id) +
                      " carries a label map but is not source/train");
    index_[rec.id] = records_.size();
    records_.push_back(std::move(rec));
}

DatasetManifest DatasetManifest::load(const std::string& path, CoordConvention convention) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open manifest: " + path);
    DatasetManifest m;
    m.convention_ = convention;
    m.base_dir_ = fs::path(path).parent_path().string();
    if (m.base_dir_.empty()) m.base_dir_ = ".";

    std::string line;
    int line_no = 0;
    bool header_seen = false;
    bool has_labels_col = false;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto cells = split_csv(line);
        if (!header_seen) {
            if (cells.size() == 7 && cells[6] == "labels") {
                has_labels_col = true;
            } else if (cells.size() != 6) {
                throw IoError("manifest line 1: expected header "
                              "id,path,coord_a,coord_b,role,domain[,labels]");
            }
            if (cells[0] != "id" || cells[1] != "path" || cells[2] != "coord_a" ||
                cells[3] != "coord_b" || cells[4] != "role" || cells[5] != "domain")
                throw IoError("manifest line 1: expected header "
                              "id,path,coord_a,coord_b,role,domain[,labels]");
            header_seen = true;
            continue;
        }
        const std::size_t expected = has_labels_col ? 7 : 6;
        if (cells.size() != expected)
            throw IoError("manifest line " + std::to_string(line_no) + ": expected " +
                          std::to_string(expected) + " cells, got " +
                          std::to_string(cells.size()));
        ManifestRecord rec;
        try {
            rec.id = std::stoull(cells[0]);
        } catch (const std::exception&) {
            throw IoError("manifest line " + std::to_string(line_no) + ": bad id '" +
                          cells[0] + "'");
        }
        rec.payload = cells[1];
        rec.coord_a = parse_double(cells[2], line_no, "coord_a");
        rec.coord_b = parse_double(cells[3], line_no, "coord_b");
        rec.role = parse_role(cells[4], line_no);
        rec.domain = parse_domain(cells[5], line_no);
        if (has_labels_col) rec.labels = cells[6];
        try {
            m.add(std::move(rec));
        } catch (const IoError& e) {
            throw IoError(std::string(e.what()) + " (line " + std::to_string(line_no) + ")");
        }
    }
    if (!header_seen) throw IoError("manifest is empty: " + path);
    return m;
}

void DatasetManifest::save(const std::string& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write manifest: " + path);
    bool any_labels = false;
    for (const auto& r : records_) any_labels = any_labels || r.has_labels();
    os << "id,path,coord_a,coord_b,role,domain";
    if (any_labels) os << ",labels";
    os << "\n";
    for (const auto& r : records_) {
        os << r.id << ',' << r.payload << ',' << format_double(r.coord_a) << ','
           << format_double(r.coord_b) << ',' << to_string(r.role) << ','
           << to_string(r.domain);
        if (any_labels) os << ',' << r.labels;
        os << "\n";
    }
    if (!os) throw IoError("write failed: " + path);
}

const ManifestRecord& DatasetManifest::record(RecordId id) const {
    auto it = index_.find(id);
    if (it == index_.end())
        throw IoError("manifest: no record with id " + std::to_string(id));
    return records_[it->second];
}

Coordinate DatasetManifest::coordinate(RecordId id) const {
    const auto& r = record(id);
    return Coordinate{r.coord_a, r.coord_b, convention_};
}

std::string DatasetManifest::resolve(const std::string& relative) const {
    fs::path p(relative);
    if (p.is_absolute()) return relative;
    return (fs::path(base_dir_) / p).string();
}

Tensor DatasetManifest::load_payload(RecordId id) const {
    return load_tensor(resolve(record(id).payload));
}

std::vector<RecordId> DatasetManifest::ids_with(Role role) const {
    std::vector<RecordId> out;
    for (const auto& r : records_)
        if (r.role == role) out.push_back(r.id);
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<RecordId> DatasetManifest::ids_with(Role role, Domain domain) const {
    std::vector<RecordId> out;
    for (const auto& r : records_)
        if (r.role == role && r.domain == domain) out.push_back(r.id);
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<RecordId> DatasetManifest::ids_with(Domain domain) const {
    std::vector<RecordId> out;
    for (const auto& r : records_)
        if (r.domain == domain) out.push_back(r.id);
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<RecordId> DatasetManifest::mining_pool_ids() const {
    std::vector<RecordId> out;
    for (const auto& r : records_)
        if (r.domain == Domain::source && (r.role == Role::gallery || r.role == Role::train))
            out.push_back(r.id);
    std::sort(out.begin(), out.end());
    return out;
}

// ---- PGM label maps ----

void save_pgm(const std::string& path, int h, int w, const std::vector<std::uint8_t>& bytes) {
    if (static_cast<std::int64_t>(bytes.size()) != static_cast<std::int64_t>(h) * w)
        throw DimensionError("save_pgm: byte count does not match extents");
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write PGM: " + path);
    os << "P5\n" << w << " " << h << "\n255\n";
    os.write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
    if (!os) throw IoError("write failed: " + path);
}

void save_label_map(const std::string& path, const LabelMap& map) {
    save_pgm(path, map.h, map.w, map.ids);
}

namespace {

int pgm_token(std::istream& is, const std::string& path) {
    // Skips whitespace and '#' comments per the PGM grammar.
    while (true) {
        int c = is.peek();
        if (c == '#') {
            std::string dummy;
            std::getline(is, dummy);
        } else if (std::isspace(c)) {
            is.get();
        } else {
            break;
        }
    }
    int v;
    if (!(is >> v)) throw IoError("malformed PGM header: " + path);
    return v;
}

}  // namespace

LabelMap load_label_map(const std::string& path, int num_classes) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open PGM: " + path);
    char p, five;
    is.get(p);
    is.get(five);
    if (p != 'P' || five != '5') throw IoError("not a binary PGM (P5): " + path);
    LabelMap map;
    map.w = pgm_token(is, path);
    map.h = pgm_token(is, path);
    const int maxval = pgm_token(is, path);
    if (maxval != 255) throw IoError("PGM maxval must be 255: " + path);
    is.get();  // single whitespace byte after maxval
    if (map.h <= 0 || map.w <= 0) throw IoError("PGM with empty extents: " + path);
    map.ids.resize(static_cast<std::size_t>(map.h) * map.w);
    is.read(reinterpret_cast<char*>(map.ids.data()),
            static_cast<std::streamsize>(map.ids.size()));
    if (!is) throw IoError("truncated PGM payload: " + path);
    for (std::size_t i = 0; i < map.ids.size(); ++i) {
        const int id = map.ids[i];
        if (id != 255 && id >= num_classes)
            throw DomainError("label map " + path + ": class id " + std::to_string(id) +
                              " outside [0," + std::to_string(num_classes) + ") at pixel " +
                              std::to_string(i));
    }
    return map;
}

// ---- synthetic fixture ----

namespace {

struct Blob {
    int cls;
    double cy, cx, radius, amp;
};

// Low-frequency per-channel pattern (constant + ramps), unit RMS.
Array smooth_pattern(int c, int h, int w, Rng& rng) {
    Array out(static_cast<std::int64_t>(c) * h * w);
    for (int ch = 0; ch < c; ++ch) {
        const double k0 = rng.normal();
        const double ky = rng.normal();
        const double kx = rng.normal();
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                out((static_cast<std::int64_t>(ch) * h + y) * w + x) =
                    k0 + ky * (static_cast<double>(y) / h - 0.5) +
                    kx * (static_cast<double>(x) / w - 0.5);
    }
    const double rms = std::sqrt(out.square().mean());
    if (rms > 0.0) out /= rms;
    return out;
}

std::string img_name(RecordId id) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "img_%06llu.vprt", static_cast<unsigned long long>(id));
    return buf;
}

std::string lbl_name(RecordId id) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "lbl_%06llu.pgm", static_cast<unsigned long long>(id));
    return buf;
}

}  // namespace

FixtureResult generate_fixture(const FixtureSpec& spec, const std::string& out_dir) {
    if (spec.places < 1 || spec.views_per_place < 1)
        throw ParameterError("fixture: places and views must be >= 1");
    if (spec.sigma < 0.0) throw ParameterError("fixture: sigma must be >= 0");
    if (spec.num_classes < 2 || spec.num_classes > 255)
        throw ParameterError("fixture: num_classes must be in [2,255]");
    fs::create_directories(out_dir);

    const int P = spec.places, V = spec.views_per_place;
    const int C = spec.channels, H = spec.height, W = spec.width;
    const std::int64_t chw = static_cast<std::int64_t>(C) * H * W;

    Rng palette_rng(substream_seed(spec.seed, "fixture.palette"));
    std::vector<std::vector<double>> palette(static_cast<std::size_t>(spec.num_classes));
    for (auto& color : palette) {
        color.resize(static_cast<std::size_t>(C));
        for (double& v : color) v = palette_rng.normal();
    }

    Rng domain_rng(substream_seed(spec.seed, "fixture.domain"));
    Array global_shift = smooth_pattern(C, H, W, domain_rng);

    DatasetManifest manifest;
    manifest.set_convention(CoordConvention::utm);
    manifest.set_base_dir(out_dir);

    const int grid = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(P))));
    const double spacing = 120.0;  // > 25 m exclusion radius by a wide margin

    FixtureResult result;
    std::vector<std::pair<RecordId, ManifestRecord>> pending;

    for (int p = 0; p < P; ++p) {
        Rng place_rng(substream_seed(spec.seed, "fixture.place." + std::to_string(p)));
        const int nblobs = 4 + static_cast<int>(place_rng.uniform_index(3));
        std::vector<Blob> blobs;
        for (int bidx = 0; bidx < nblobs; ++bidx) {
            Blob b;
            b.cls = 1 + static_cast<int>(place_rng.uniform_index(
                            static_cast<std::uint64_t>(spec.num_classes - 1)));
            b.cy = place_rng.uniform(0.15, 0.85) * H;
            b.cx = place_rng.uniform(0.15, 0.85) * W;
            b.radius = place_rng.uniform(0.12, 0.30) * std::min(H, W);
            b.amp = place_rng.uniform(0.7, 1.3);
            blobs.push_back(b);
        }
        const double east0 = 500000.0 + spacing * (p % grid);
        const double north0 = 4000000.0 + spacing * (p / grid);

        for (int v = 0; v < V; ++v) {
            Rng view_rng(substream_seed(spec.seed, "fixture.view." + std::to_string(p) + "." +
                                                       std::to_string(v)));
            const double dy = spec.view_jitter_px > 0
                                  ? view_rng.uniform(-spec.view_jitter_px, spec.view_jitter_px)
                                  : 0.0;
            const double dx = spec.view_jitter_px > 0
                                  ? view_rng.uniform(-spec.view_jitter_px, spec.view_jitter_px)
                                  : 0.0;

            Array image = Array::Zero(chw);
            LabelMap labels;
            labels.h = H;
            labels.w = W;
            labels.ids.assign(static_cast<std::size_t>(H) * W, 0);
            for (int y = 0; y < H; ++y) {
                for (int x = 0; x < W; ++x) {
                    double best = 0.0;
                    int best_cls = 0;
                    for (const Blob& b : blobs) {
                        const double ddy = y - (b.cy + dy);
                        const double ddx = x - (b.cx + dx);
                        const double s = b.amp * std::exp(-(ddy * ddy + ddx * ddx) /
                                                          (2.0 * 0.25 * b.radius * b.radius));
                        if (s > best) {
                            best = s;
                            best_cls = b.cls;
                        }
                        for (int ch = 0; ch < C; ++ch)
                            image((static_cast<std::int64_t>(ch) * H + y) * W + x) +=
                                s * palette[static_cast<std::size_t>(b.cls)]
                                           [static_cast<std::size_t>(ch)];
                    }
                    std::uint8_t lab = 0;
                    if (best > 0.45)
                        lab = static_cast<std::uint8_t>(best_cls);
                    else if (best > 0.30)
                        lab = 255;  // ambiguous blob fringe is left unlabeled
                    labels.ids[static_cast<std::size_t>(y) * W + x] = lab;
                }
            }
            for (std::int64_t i = 0; i < chw; ++i)
                image(i) += spec.view_noise * view_rng.normal();

            const double angle = 6.283185307179586 * v / V + view_rng.uniform(0.0, 0.3);
            const double rad = view_rng.uniform(1.0, 4.4);
            const double east = east0 + rad * std::cos(angle);
            const double north = north0 + rad * std::sin(angle);

            const RecordId src_id = static_cast<RecordId>(p) * V + v;
            const RecordId tgt_id = static_cast<RecordId>(P) * V + src_id;

            save_tensor((fs::path(out_dir) / img_name(src_id)).string(),
                        Tensor::from_array({C, H, W}, image));
            save_label_map((fs::path(out_dir) / lbl_name(src_id)).string(), labels);
            ++result.label_maps;

            ManifestRecord src;
            src.id = src_id;
            src.payload = img_name(src_id);
            src.coord_a = east;
            src.coord_b = north;
            src.role = Role::train;
            src.domain = Domain::source;
            src.labels = lbl_name(src_id);
            pending.emplace_back(src_id, std::move(src));
            ++result.source_records;

            Array record_shift = smooth_pattern(C, H, W, view_rng);
            Array target = image + spec.sigma * (0.8 * global_shift + 0.6 * record_shift);
            save_tensor((fs::path(out_dir) / img_name(tgt_id)).string(),
                        Tensor::from_array({C, H, W}, std::move(target)));

            ManifestRecord tgt;
            tgt.id = tgt_id;
            tgt.payload = img_name(tgt_id);
            tgt.coord_a = east;
            tgt.coord_b = north;
            tgt.role = Role::query;
            tgt.domain = Domain::target;
            pending.emplace_back(tgt_id, std::move(tgt));
            ++result.target_records;
        }
    }

    std::sort(pending.begin(), pending.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    for (auto& [id, rec] : pending) manifest.add(std::move(rec));

    result.manifest_path = (fs::path(out_dir) / "manifest.csv").string();
    manifest.save(result.manifest_path);
    return result;
}

}  // namespace vpr
