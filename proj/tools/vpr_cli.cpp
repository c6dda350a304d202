#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "vpr/config.hpp"
#include "vpr/dataset.hpp"
#include "vpr/mining.hpp"
#include "vpr/model.hpp"
#include "vpr/retrieval.hpp"
#include "vpr/serialize.hpp"
#include "vpr/trainer.hpp"

namespace fs = std::filesystem;
using namespace vpr;

namespace {

CoordConvention parse_coords(const std::string& s) {
    if (s == "utm") return CoordConvention::utm;
    if (s == "latlon") return CoordConvention::latlon;
    throw ParameterError("unknown coordinate convention '" + s + "' (utm|latlon)");
}

Role parse_role_arg(const std::string& s) {
    if (s == "gallery") return Role::gallery;
    if (s == "query") return Role::query;
    if (s == "train") return Role::train;
    throw ParameterError("unknown role '" + s + "' (gallery|query|train)");
}

bool parse_shape(const std::string& s, int& c, int& h, int& w) {
    return std::sscanf(s.c_str(), "%dx%dx%d", &c, &h, &w) == 3;
}

TrainConfig load_config_or_default(const std::string& path) {
    return path.empty() ? default_train_config() : load_train_config(path);
}

VprModel restore_model(const TrainConfig& cfg, const std::string& checkpoint,
                       std::uint64_t seed) {
    VprModel model(cfg.model, seed);
    if (!checkpoint.empty()) model.load_parameters(load_checkpoint(checkpoint));
    return model;
}

DescriptorDb extract_descriptors(const VprModel& model, const DatasetManifest& manifest,
                                 const std::vector<RecordId>& ids) {
    DescriptorDb db;
    db.ids = ids;
    db.vectors.resize(static_cast<Eigen::Index>(ids.size()), model.descriptor_length());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        Tensor d = model.describe(manifest.load_payload(ids[i]));
        db.vectors.row(static_cast<Eigen::Index>(i)) =
            Eigen::Map<const Eigen::VectorXd>(d.array().data(), d.size()).transpose();
    }
    return db;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Semantically guided multi-scale-attention place-recognition engine"};
    app.require_subcommand(1);

    std::string config_path, out_path = "out";
    std::uint64_t seed = 0;
    app.add_option("--config", config_path, "TOML configuration file")->capture_default_str();
    app.add_option("--seed", seed, "master RNG seed")->capture_default_str();
    app.add_option("--out", out_path, "output directory or file")->capture_default_str();

    // fixture
    auto* fixture_cmd = app.add_subcommand("fixture", "generate a synthetic dataset");
    FixtureSpec fspec;
    std::string shape = "3x32x32";
    fixture_cmd->add_option("--places", fspec.places, "number of places")->capture_default_str();
    fixture_cmd->add_option("--views", fspec.views_per_place, "views per place")
        ->capture_default_str();
    fixture_cmd->add_option("--shape", shape, "image shape CxHxW")->capture_default_str();
    fixture_cmd->add_option("--sigma", fspec.sigma, "domain shift magnitude")
        ->capture_default_str();
    fixture_cmd->add_option("--noise", fspec.view_noise, "per-view pixel noise")
        ->capture_default_str();
    fixture_cmd->add_option("--jitter", fspec.view_jitter_px, "per-view translation (px)")
        ->capture_default_str();
    fixture_cmd->add_option("--classes", fspec.num_classes, "semantic classes")
        ->capture_default_str();

    // train
    auto* train_cmd = app.add_subcommand("train", "train a model on a manifest");
    std::string manifest_path, target_manifest_path, coords = "utm";
    int steps_override = -1;
    bool no_ms_gem = false, no_att = false, no_semseg = false, no_g_semseg = false,
         no_da = false;
    train_cmd->add_option("--manifest", manifest_path, "source manifest CSV")->required();
    train_cmd->add_option("--target-manifest", target_manifest_path,
                          "manifest providing unlabeled target images");
    train_cmd->add_option("--coords", coords, "coordinate convention (utm|latlon)")
        ->capture_default_str();
    train_cmd->add_option("--steps", steps_override, "override schedule.total_steps");
    train_cmd->add_flag("--no-ms-gem", no_ms_gem, "single-scale GeM on f5");
    train_cmd->add_flag("--no-att", no_att, "disable the attention module");
    train_cmd->add_flag("--no-semseg", no_semseg, "disable the segmentation loss");
    train_cmd->add_flag("--no-g-semseg", no_g_semseg, "segmentation not guided by M");
    train_cmd->add_flag("--no-da", no_da, "disable domain adaptation");

    // extract
    auto* extract_cmd = app.add_subcommand("extract", "compute a descriptor DB for a split");
    std::string ex_manifest, ex_checkpoint, ex_role = "gallery", ex_coords = "utm";
    extract_cmd->add_option("--manifest", ex_manifest, "manifest CSV")->required();
    extract_cmd->add_option("--checkpoint", ex_checkpoint, "model checkpoint (VPRC)");
    extract_cmd->add_option("--role", ex_role, "split to extract (gallery|query|train)")
        ->capture_default_str();
    extract_cmd->add_option("--coords", ex_coords, "coordinate convention")
        ->capture_default_str();

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "Recall@N over descriptor DBs");
    std::string gallery_db_path, query_db_path, eval_manifest, eval_coords = "utm";
    double radius = 25.0;
    eval_cmd->add_option("--gallery-db", gallery_db_path, "gallery descriptors (VPRD)")
        ->required();
    eval_cmd->add_option("--query-db", query_db_path, "query descriptors (VPRD)")->required();
    eval_cmd->add_option("--manifest", eval_manifest, "manifest with coordinates")->required();
    eval_cmd->add_option("--radius", radius, "positive radius in meters")
        ->capture_default_str();
    eval_cmd->add_option("--coords", eval_coords, "coordinate convention")
        ->capture_default_str();

    // attn-dump
    auto* attn_cmd = app.add_subcommand("attn-dump", "export attention maps as PGM");
    std::string at_manifest, at_checkpoint, at_role;
    attn_cmd->add_option("--manifest", at_manifest, "manifest CSV")->required();
    attn_cmd->add_option("--checkpoint", at_checkpoint, "model checkpoint (VPRC)");
    attn_cmd->add_option("--role", at_role, "restrict to one role");

    CLI11_PARSE(app, argc, argv);

    try {
        if (fixture_cmd->parsed()) {
            fspec.seed = seed;
            if (!parse_shape(shape, fspec.channels, fspec.height, fspec.width))
                throw ParameterError("--shape must look like 3x32x32");
            FixtureResult r = generate_fixture(fspec, out_path);
            std::cout << "fixture: " << r.source_records << " source train records, "
                      << r.target_records << " target query records, " << r.label_maps
                      << " label maps\nmanifest: " << r.manifest_path << "\n";
        } else if (train_cmd->parsed()) {
            TrainConfig cfg = load_config_or_default(config_path);
            if (steps_override >= 0) cfg.total_steps = steps_override;
            if (no_ms_gem) cfg.model.ablation.ms_gem = false;
            if (no_att) cfg.model.ablation.att = false;
            if (no_semseg) cfg.model.ablation.semseg = false;
            if (no_g_semseg) cfg.model.ablation.g_semseg = false;
            if (no_da) cfg.model.ablation.da = false;
            DatasetManifest source = DatasetManifest::load(manifest_path, parse_coords(coords));
            std::optional<DatasetManifest> target;
            if (!target_manifest_path.empty())
                target = DatasetManifest::load(target_manifest_path, parse_coords(coords));
            FitResult r = fit(cfg, source, target ? &*target : nullptr, seed, out_path);
            std::cout << "trained " << r.steps << " steps; mined " << r.mined
                      << " triplets; unusable queries " << r.unusable << " (fraction "
                      << r.unusable_fraction << ")\n"
                      << "source recall@1 " << r.final_recall1 << "\ncheckpoint "
                      << r.checkpoint_path << "\nmetrics " << r.metrics_path << "\n";
        } else if (extract_cmd->parsed()) {
            TrainConfig cfg = load_config_or_default(config_path);
            DatasetManifest manifest =
                DatasetManifest::load(ex_manifest, parse_coords(ex_coords));
            VprModel model = restore_model(cfg, ex_checkpoint, seed);
            const auto ids = manifest.ids_with(parse_role_arg(ex_role));
            if (ids.empty()) throw DomainError("extract: no records with role " + ex_role);
            DescriptorDb db = extract_descriptors(model, manifest, ids);
            save_descriptor_db(out_path, db);
            std::cout << "extracted " << db.ids.size() << " descriptors of dim "
                      << db.vectors.cols() << " to " << out_path << "\n";
        } else if (eval_cmd->parsed()) {
            DatasetManifest manifest =
                DatasetManifest::load(eval_manifest, parse_coords(eval_coords));
            DescriptorDb gallery = load_descriptor_db(gallery_db_path);
            DescriptorDb queries = load_descriptor_db(query_db_path);
            DescriptorIndex index = DescriptorIndex::from_db(gallery);
            std::map<RecordId, Coordinate> gallery_coords;
            for (RecordId id : gallery.ids) gallery_coords[id] = manifest.coordinate(id);
            std::vector<QueryRecord> qrecs;
            for (std::size_t i = 0; i < queries.ids.size(); ++i)
                qrecs.push_back(QueryRecord{queries.ids[i],
                                            queries.vectors.row(static_cast<Eigen::Index>(i)),
                                            manifest.coordinate(queries.ids[i])});
            EvalResult r = recall_at_n(index, gallery_coords, qrecs, radius);
            std::printf("Recall  1 / 5 / 10\n");
            std::printf("        %.1f / %.1f / %.1f\n", 100.0 * r.recall.at(1),
                        100.0 * r.recall.at(5), 100.0 * r.recall.at(10));
            std::printf("queries evaluated %d, excluded (no geo positive) %d\n",
                        r.query_count, r.excluded_queries);
            if (!out_path.empty() && out_path != "out") {
                std::ofstream os(out_path, std::ios::trunc);
                os << "n,recall\n";
                for (const auto& [n, v] : r.recall) os << n << ',' << v << "\n";
                os << "evaluated," << r.query_count << "\nexcluded," << r.excluded_queries
                   << "\n";
                if (!os) throw IoError("cannot write report: " + out_path);
            }
        } else if (attn_cmd->parsed()) {
            TrainConfig cfg = load_config_or_default(config_path);
            DatasetManifest manifest = DatasetManifest::load(at_manifest);
            VprModel model = restore_model(cfg, at_checkpoint, seed);
            fs::create_directories(out_path);
            std::vector<RecordId> ids;
            if (at_role.empty()) {
                for (const auto& rec : manifest.records()) ids.push_back(rec.id);
                std::sort(ids.begin(), ids.end());
            } else {
                ids = manifest.ids_with(parse_role_arg(at_role));
            }
            for (RecordId id : ids) {
                ForwardBundle fb = model.forward_descriptor(manifest.load_payload(id));
                const Array& m = fb.M.array();
                const double lo = m.minCoeff(), hi = m.maxCoeff();
                std::vector<std::uint8_t> bytes(static_cast<std::size_t>(m.size()));
                for (Eigen::Index i = 0; i < m.size(); ++i)
                    bytes[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(
                        hi > lo ? std::lround(255.0 * (m(i) - lo) / (hi - lo)) : 0);
                char name[32];
                std::snprintf(name, sizeof(name), "attn_%06llu.pgm",
                              static_cast<unsigned long long>(id));
                save_pgm((fs::path(out_path) / name).string(), fb.M.extent(1), fb.M.extent(2),
                         bytes);
            }
            std::cout << "wrote " << ids.size() << " attention maps to " << out_path << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
