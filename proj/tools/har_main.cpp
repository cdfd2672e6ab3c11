// Command-line front end: dataset synthesis, training, evaluation, activity
// localization and the finite-difference gradient audit.

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "har/attention.hpp"
#include "har/datasets.hpp"
#include "har/gradcheck.hpp"
#include "har/localization.hpp"
#include "har/model.hpp"
#include "har/ops.hpp"
#include "har/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitUsage = 2;

struct RunConfig {
    std::string dataset = "synthetic";  // ucihar | synthetic
    std::string data_dir;
    std::string variant = "none";  // none | att | att2 | att3
    std::string compat = "pc";
    std::string norm = "tanh";
    std::string checkpoint;
    std::string out_dir = "out";
    std::string config_file;
    std::string split = "test";  // train | val | test
    std::size_t epochs = 100;
    std::size_t batch = 50;
    double lr = 0.001;
    std::uint64_t seed = 7;
    std::size_t density_w = 128;
    std::size_t n_windows = 8000;
    std::size_t limit = 0;  // sequences to process (0 = all)
    std::size_t emit = 8;   // per-sequence curve files to write
    std::size_t gradcheck_seeds = 20;
};

std::size_t variant_levels(const std::string& v) {
    if (v == "none") return 0;
    if (v == "att") return 1;
    if (v == "att2") return 2;
    if (v == "att3") return 3;
    throw std::invalid_argument("unknown variant '" + v + "' (expected none|att|att2|att3)");
}

// flags beat config-file values beat defaults
void merge_config_file(CLI::App& app, RunConfig& cfg) {
    if (cfg.config_file.empty()) return;
    std::ifstream in(cfg.config_file);
    if (!in) throw std::invalid_argument("cannot open config file " + cfg.config_file);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw std::invalid_argument("config file " + cfg.config_file + ": " + e.what());
    }
    auto take = [&](const char* flag, const char* key, auto& slot) {
        const CLI::Option* opt = app.get_option_no_throw(flag);
        const bool given = opt != nullptr && opt->count() > 0;
        if (!given && j.contains(key)) {
            j.at(key).get_to(slot);
        }
    };
    take("--dataset", "dataset", cfg.dataset);
    take("--data-dir", "data_dir", cfg.data_dir);
    take("--variant", "variant", cfg.variant);
    take("--compat", "compat", cfg.compat);
    take("--norm", "norm", cfg.norm);
    take("--out", "out", cfg.out_dir);
    take("--epochs", "epochs", cfg.epochs);
    take("--batch", "batch", cfg.batch);
    take("--lr", "lr", cfg.lr);
    take("--seed", "seed", cfg.seed);
    take("--w", "w", cfg.density_w);
    take("--n", "n", cfg.n_windows);
    take("--split", "split", cfg.split);
    take("--limit", "limit", cfg.limit);
    take("--emit", "emit", cfg.emit);
}

har::SynthConfig synth_config_for(const RunConfig& cfg) {
    har::SynthConfig sc;
    if (!cfg.config_file.empty()) {
        std::ifstream in(cfg.config_file);
        if (!in) throw std::invalid_argument("cannot open config file " + cfg.config_file);
        json j = json::parse(in);
        if (j.contains("generator")) sc = har::synth_config_from_json(j.at("generator"));
    }
    sc.num_windows = cfg.n_windows;
    har::validate(sc);
    return sc;
}

std::string synth_prefix(const std::string& dir) { return (fs::path(dir) / "weak").string(); }

void write_json(const std::string& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << j.dump(2) << '\n';
    if (!out) throw std::runtime_error("write failed for " + path);
}

json eval_to_json(const har::EvalResult& ev) {
    return {{"accuracy", ev.accuracy},
            {"per_class_accuracy", ev.per_class_accuracy},
            {"confusion", ev.confusion},
            {"throughput_seqs_per_s", ev.throughput_seqs_per_s},
            {"count", ev.count}};
}

// ---------------- synth ----------------

int cmd_synth(const RunConfig& cfg) {
    const har::SynthConfig sc = synth_config_for(cfg);
    fs::create_directories(cfg.out_dir);
    std::cout << "generating " << sc.num_windows << " weakly labeled windows (seed " << cfg.seed
              << ")" << std::endl;
    har::SequenceDataset ds = har::synth_weak(sc, cfg.seed);
    ds.check();
    const std::string prefix = synth_prefix(cfg.out_dir);
    har::save_synth_dataset(ds, prefix, sc, cfg.seed);

    std::array<std::size_t, 4> counts{};
    for (int l : ds.labels) counts[static_cast<std::size_t>(l)]++;
    json summary = {{"N", ds.size()},
                    {"C", ds.num_channels},
                    {"L", ds.seq_len},
                    {"seed", cfg.seed},
                    {"class_names", ds.class_names},
                    {"class_counts", counts},
                    {"files", {prefix + ".f64", prefix + ".json"}}};
    write_json((fs::path(cfg.out_dir) / "synth_summary.json").string(), summary);
    std::cout << "wrote " << prefix << ".f64 and sidecar" << std::endl;
    return kExitOk;
}

// ---------------- dataset plumbing shared by train/eval/locate ----------------

struct LoadedData {
    har::SequenceDataset train, val, test;
    bool has_val = false;
    std::size_t num_classes = 0;
};

LoadedData load_for_run(const RunConfig& cfg, std::uint64_t split_seed) {
    if (cfg.data_dir.empty()) throw std::invalid_argument("--data-dir is required");
    LoadedData out;
    if (cfg.dataset == "ucihar") {
        har::SequenceDataset train = har::load_ucihar(cfg.data_dir, "train");
        har::SequenceDataset test = har::load_ucihar(cfg.data_dir, "test");
        const har::ChannelStats stats = har::compute_channel_stats(train);
        out.train = har::standardize(std::move(train), stats);
        out.test = har::standardize(std::move(test), stats);
        out.has_val = false;
        out.num_classes = 6;
    } else if (cfg.dataset == "synthetic") {
        har::SequenceDataset all = har::load_synth_dataset(synth_prefix(cfg.data_dir));
        const har::SplitIndices idx = har::split_indices(all.size(), {0.7, 0.1, 0.2}, split_seed);
        har::SequenceDataset train = all.subset(idx.train);
        har::SequenceDataset val = all.subset(idx.val);
        har::SequenceDataset test = all.subset(idx.test);
        const har::ChannelStats stats = har::compute_channel_stats(train);
        out.train = har::standardize(std::move(train), stats);
        out.val = har::standardize(std::move(val), stats);
        out.test = har::standardize(std::move(test), stats);
        out.has_val = true;
        out.num_classes = all.class_names.size();
    } else {
        throw std::invalid_argument("unknown dataset '" + cfg.dataset +
                                    "' (expected ucihar|synthetic)");
    }
    return out;
}

har::ModelSpec spec_for(const RunConfig& cfg, const har::SequenceDataset& sample,
                        std::size_t num_classes) {
    return har::ModelSpec::paper_default(sample.seq_len, sample.num_channels, num_classes,
                                         variant_levels(cfg.variant),
                                         har::compat_mode_from_string(cfg.compat),
                                         har::norm_mode_from_string(cfg.norm));
}

// ---------------- train ----------------

int cmd_train(const RunConfig& cfg) {
    LoadedData data = load_for_run(cfg, cfg.seed);
    fs::create_directories(cfg.out_dir);

    const har::ModelSpec spec = spec_for(cfg, data.train, data.num_classes);
    har::Model model = har::build_model(spec, cfg.seed);

    har::TrainConfig tc;
    tc.epochs = cfg.epochs;
    tc.batch_size = cfg.batch;
    tc.learning_rate = cfg.lr;
    tc.seed = cfg.seed;
    std::cout << "training " << cfg.variant << " (" << cfg.compat << "," << cfg.norm << ") on "
              << cfg.dataset << ": " << data.train.size() << " train";
    if (data.has_val) std::cout << " / " << data.val.size() << " val";
    std::cout << " / " << data.test.size() << " test sequences" << std::endl;

    har::TrainResult res =
        har::train(model, data.train, data.has_val ? &data.val : nullptr, tc, &std::cout);

    har::write_history_csv((fs::path(cfg.out_dir) / "history.csv").string(), res.history);
    har::save_checkpoint(res.best_checkpoint, (fs::path(cfg.out_dir) / "checkpoint.json").string());
    if (data.has_val) {
        har::save_checkpoint(res.final_checkpoint,
                             (fs::path(cfg.out_dir) / "checkpoint_final.json").string());
    }

    const har::EvalResult final_eval = har::evaluate(model, data.test, cfg.batch);
    json metrics = {{"command", "train"},
                    {"dataset", cfg.dataset},
                    {"variant", cfg.variant},
                    {"compat_mode", cfg.compat},
                    {"norm_mode", cfg.norm},
                    {"epochs", cfg.epochs},
                    {"batch_size", cfg.batch},
                    {"learning_rate", cfg.lr},
                    {"seed", cfg.seed},
                    {"final", eval_to_json(final_eval)}};
    if (data.has_val) {
        har::Model best = har::model_from_checkpoint(res.best_checkpoint);
        const har::EvalResult best_eval = har::evaluate(best, data.test, cfg.batch);
        metrics["best"] = eval_to_json(best_eval);
        metrics["best_epoch"] = res.best_epoch;
    } else {
        metrics["best"] = metrics["final"];
        metrics["best_epoch"] = cfg.epochs;
    }
    write_json((fs::path(cfg.out_dir) / "metrics.json").string(), metrics);
    std::cout << "test accuracy (final) " << final_eval.accuracy << "; metrics written to "
              << cfg.out_dir << std::endl;
    return kExitOk;
}

// ---------------- eval ----------------

const har::SequenceDataset& pick_split(const LoadedData& data, const std::string& split) {
    if (split == "train") return data.train;
    if (split == "val" && data.has_val) return data.val;
    if (split == "test") return data.test;
    throw std::invalid_argument("unknown split '" + split + "' for this dataset");
}

int cmd_eval(const RunConfig& cfg) {
    har::Checkpoint ckpt = har::load_checkpoint(cfg.checkpoint);
    har::Model model = har::model_from_checkpoint(ckpt);
    LoadedData data = load_for_run(cfg, ckpt.seed);
    const har::SequenceDataset& ds = pick_split(data, cfg.split);
    const har::EvalResult ev = har::evaluate(model, ds, cfg.batch);
    fs::create_directories(cfg.out_dir);
    json metrics = eval_to_json(ev);
    metrics["command"] = "eval";
    metrics["dataset"] = cfg.dataset;
    metrics["split"] = cfg.split;
    metrics["checkpoint"] = cfg.checkpoint;
    write_json((fs::path(cfg.out_dir) / "metrics.json").string(), metrics);
    std::cout << "accuracy " << ev.accuracy << " over " << ev.count << " sequences ("
              << ev.throughput_seqs_per_s << " seqs/s)" << std::endl;
    return kExitOk;
}

// ---------------- locate ----------------

int cmd_locate(const RunConfig& cfg) {
    har::Checkpoint ckpt = har::load_checkpoint(cfg.checkpoint);
    if (ckpt.spec.attention_levels == 0) {
        std::cerr << "locate: localization requires attention (checkpoint has none)" << std::endl;
        return kExitUsage;
    }
    har::Model model = har::model_from_checkpoint(ckpt);
    LoadedData data = load_for_run(cfg, ckpt.seed);
    const har::SequenceDataset& ds = pick_split(data, cfg.split);

    const auto taps = har::tap_infos(ckpt.spec);
    const har::TapInfo& last_tap = taps.back();
    fs::create_directories(cfg.out_dir);

    const std::size_t total = cfg.limit > 0 ? std::min(cfg.limit, ds.size()) : ds.size();
    std::size_t hits = 0, predictions = 0;
    std::size_t top_hits = 0, top_total = 0;  // highest-density peak per sequence
    double iou_sum = 0.0;
    std::size_t emitted = 0;

    std::vector<std::size_t> order(ds.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t start = 0; start < total; start += cfg.batch) {
        const std::size_t count = std::min(cfg.batch, total - start);
        har::TensorPtr input = har::batch_tensor(ds, order, start, count);
        har::ModelForward fwd = model.forward(input);
        const har::TensorPtr& last_scores = fwd.scores.back();
        const std::size_t n = last_scores->shape[1];

        for (std::size_t i = 0; i < count; ++i) {
            const std::size_t seq = start + i;
            std::vector<double> scores(last_scores->data.begin() + i * n,
                                       last_scores->data.begin() + (i + 1) * n);
            har::DensityCurve curve = har::density(scores, cfg.density_w,
                                                   ckpt.spec.attention_levels,
                                                   last_tap.stride_to_raw);
            har::LocalizationResult loc =
                har::to_raw_windows(har::find_peaks(curve), curve, ds.seq_len);

            if (ds.has_segments()) {
                const har::LocalizationMetrics m =
                    har::localization_metrics(loc.windows, ds.segments[seq]);
                predictions += m.num_predictions;
                hits += static_cast<std::size_t>(
                    std::llround(m.hit_rate * static_cast<double>(m.num_predictions)));
                iou_sum += m.mean_best_iou * static_cast<double>(m.num_predictions);
                if (!loc.windows.empty()) {
                    std::size_t best = 0;
                    for (std::size_t p = 1; p < loc.peak_scores.size(); ++p) {
                        if (loc.peak_scores[p] > loc.peak_scores[best]) best = p;
                    }
                    const har::LocalizationMetrics top =
                        har::localization_metrics({loc.windows[best]}, ds.segments[seq]);
                    ++top_total;
                    if (top.hit_rate > 0.5) ++top_hits;
                }
            }

            if (emitted < cfg.emit) {
                const std::string base =
                    (fs::path(cfg.out_dir) / ("seq_" + std::to_string(seq))).string();
                har::write_attention_csv(base + "_attention.csv",
                                         har::extract_profiles(ckpt.spec, fwd, i));
                har::write_density_csv(base + "_density.csv", scores, curve);
                json wj = har::to_json(loc);
                wj["sequence"] = seq;
                wj["label"] = ds.labels[seq];
                if (ds.has_segments()) {
                    json segs = json::array();
                    for (const har::Interval& s : ds.segments[seq]) {
                        segs.push_back({{"start", s.begin}, {"end", s.end}});
                    }
                    wj["ground_truth"] = segs;
                }
                write_json(base + "_windows.json", wj);
                ++emitted;
            }
        }
    }

    json metrics = {{"command", "locate"},
                    {"dataset", cfg.dataset},
                    {"split", cfg.split},
                    {"checkpoint", cfg.checkpoint},
                    {"num_sequences", total},
                    {"num_predictions", predictions},
                    {"w", cfg.density_w},
                    {"level", ckpt.spec.attention_levels},
                    {"stride_to_raw", last_tap.stride_to_raw}};
    if (ds.has_segments()) {
        metrics["hit_rate"] =
            predictions > 0 ? static_cast<double>(hits) / static_cast<double>(predictions) : 0.0;
        metrics["mean_best_iou"] =
            predictions > 0 ? iou_sum / static_cast<double>(predictions) : 0.0;
        // fraction of sequences whose single highest-density window hits
        metrics["top_peak_hit_rate"] =
            top_total > 0 ? static_cast<double>(top_hits) / static_cast<double>(top_total) : 0.0;
    }
    write_json((fs::path(cfg.out_dir) / "locate_metrics.json").string(), metrics);
    if (ds.has_segments()) {
        std::cout << "hit_rate " << metrics["hit_rate"] << "  mean_best_iou "
                  << metrics["mean_best_iou"] << "  (" << predictions << " windows over " << total
                  << " sequences)" << std::endl;
    } else {
        std::cout << predictions << " windows over " << total << " sequences" << std::endl;
    }
    return kExitOk;
}

// ---------------- gradcheck ----------------

int cmd_gradcheck(const RunConfig& cfg) {
    const auto results = har::run_gradcheck_suite(cfg.gradcheck_seeds);
    bool all_ok = true;
    std::printf("%-24s %-12s %s\n", "op", "max_rel_err", "status");
    for (const auto& r : results) {
        std::printf("%-24s %-12.3e %s%s%s\n", r.op.c_str(), r.max_rel_err, r.ok ? "ok" : "FAIL",
                    r.detail.empty() ? "" : "  ", r.detail.c_str());
        all_ok = all_ok && r.ok;
    }
    if (!all_ok) {
        std::cout << "gradient check FAILED" << std::endl;
        return kExitCheckFailed;
    }
    std::cout << "all gradients within tolerance" << std::endl;
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    har::tune_allocator();
    CLI::App app{"attention-based 1D CNN for weakly labeled activity recognition"};
    app.require_subcommand(1);
    RunConfig cfg;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", cfg.config_file, "JSON config file (flags take precedence)");
        sub->add_option("--out", cfg.out_dir, "output directory");
        sub->add_option("--seed", cfg.seed, "master seed");
    };

    CLI::App* synth = app.add_subcommand("synth", "generate the synthetic weakly labeled dataset");
    add_common(synth);
    synth->add_option("--n", cfg.n_windows, "number of windows");

    CLI::App* train = app.add_subcommand("train", "train a model variant");
    add_common(train);
    train->add_option("--dataset", cfg.dataset, "ucihar | synthetic");
    train->add_option("--data-dir", cfg.data_dir, "dataset location");
    train->add_option("--variant", cfg.variant, "none | att | att2 | att3");
    train->add_option("--compat", cfg.compat, "dot | pc");
    train->add_option("--norm", cfg.norm, "sm | tanh");
    train->add_option("--epochs", cfg.epochs, "training epochs");
    train->add_option("--batch", cfg.batch, "batch size");
    train->add_option("--lr", cfg.lr, "learning rate");

    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(eval);
    eval->add_option("--checkpoint", cfg.checkpoint, "checkpoint path")->required();
    eval->add_option("--dataset", cfg.dataset, "ucihar | synthetic");
    eval->add_option("--data-dir", cfg.data_dir, "dataset location");
    eval->add_option("--split", cfg.split, "train | val | test");
    eval->add_option("--batch", cfg.batch, "batch size");

    CLI::App* locate =
        app.add_subcommand("locate", "emit compatibility curves and activity windows");
    add_common(locate);
    locate->add_option("--checkpoint", cfg.checkpoint, "checkpoint path")->required();
    locate->add_option("--dataset", cfg.dataset, "ucihar | synthetic");
    locate->add_option("--data-dir", cfg.data_dir, "dataset location");
    locate->add_option("--split", cfg.split, "train | val | test");
    locate->add_option("--w", cfg.density_w, "density slide-window width (feature coordinates)");
    locate->add_option("--limit", cfg.limit, "max sequences to process (0 = all)");
    locate->add_option("--emit", cfg.emit, "per-sequence curve files to write");
    locate->add_option("--batch", cfg.batch, "batch size");

    CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient audit");
    gradcheck->add_option("--seeds", cfg.gradcheck_seeds, "random seeds per op");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        CLI::App* sub = app.get_subcommands().front();
        merge_config_file(*sub, cfg);
        if (sub == synth) return cmd_synth(cfg);
        if (sub == train) return cmd_train(cfg);
        if (sub == eval) return cmd_eval(cfg);
        if (sub == locate) return cmd_locate(cfg);
        if (sub == gradcheck) return cmd_gradcheck(cfg);
        std::cerr << "no command" << std::endl;
        return kExitUsage;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return kExitCheckFailed;
    }
}
