// cliffm: train / evaluate / profile / benchmark the dual-resolution
// rolling-interaction backbone, plus dataset utilities.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "cliffm/bench.hpp"
#include "cliffm/gradcheck_suites.hpp"
#include "cliffm/profile.hpp"
#include "cliffm/synth.hpp"
#include "cliffm/trainer.hpp"

using namespace cliffm;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void prepare_out_dir(const std::string& out, bool force) {
    if (out.empty()) throw ConfigError("--out is required");
    if (fs::exists(out) && !fs::is_empty(out) && !force)
        throw ConfigError("output directory " + out + " is not empty (use --force to reuse)");
    fs::create_directories(out);
}

void apply_overrides(RunConfig& cfg, const std::vector<std::string>& sets) {
    for (const auto& kv : sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw ConfigError("--set expects key=value, got '" + kv + "'");
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot create " + path);
    f << text;
}

json metrics_to_json(const MetricsReport& rep) {
    json per = json::array();
    for (const auto& cm : rep.per_class) {
        json c;
        if (cm.auc) c["auc"] = *cm.auc;
        else c["auc"] = nullptr;
        c["best_threshold"] = cm.best_threshold;
        c["best_f1"] = cm.best_f1;
        c["f1_at_0.5"] = cm.f1_at_half;
        per.push_back(c);
    }
    return json{{"macro_auc", rep.macro_auc},
                {"macro_f1opt", rep.macro_f1opt},
                {"macro_f1_at_0.5", rep.macro_f1_fixed},
                {"degenerate_classes", rep.degenerate_classes},
                {"per_class", per}};
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& sets,
              const std::string& data, const std::string& out, bool force, bool quiet) {
    RunConfig cfg = config_path.empty() ? RunConfig{} : RunConfig::from_file(config_path);
    apply_overrides(cfg, sets);
    cfg.validate();
    prepare_out_dir(out, force);

    const std::string manifest = (fs::path(data) / "manifest.csv").string();
    TrainJob job;
    job.cfg = cfg;
    job.records = parse_manifest(manifest, cfg.num_classes);
    job.data_root = data;
    job.out_dir = out;
    job.quiet = quiet;
    TrainResult res = train_model(job);
    std::cout << "best val macro AUC " << res.best_auc << " at epoch " << res.best_epoch
              << (res.early_stopped ? " (early stop)" : "") << "\n"
              << "artifacts in " << out << "\n";
    return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& manifest,
             const std::string& split, const std::string& split_file, double ratio, u64 seed,
             const std::string& out, bool force) {
    prepare_out_dir(out, force);
    CliffordM<float> model = load_checkpoint<float>(checkpoint);
    auto records = parse_manifest(manifest, model.cfg.num_classes);

    PatientSplit ps;
    if (!split_file.empty()) {
        // file of patient ids = the chosen side; everything else is the other
        std::ifstream f(split_file);
        if (!f) throw IoError("cannot open split file " + split_file);
        std::set<std::string> ids;
        std::string line;
        while (std::getline(f, line))
            if (!line.empty()) ids.insert(line);
        for (const auto& r : records)
            (ids.count(r.patient_id) ? (split == "train" ? ps.train_ids : ps.val_ids)
                                     : (split == "train" ? ps.val_ids : ps.train_ids))
                .push_back(r.patient_id);
        std::sort(ps.train_ids.begin(), ps.train_ids.end());
        ps.train_ids.erase(std::unique(ps.train_ids.begin(), ps.train_ids.end()),
                           ps.train_ids.end());
        std::sort(ps.val_ids.begin(), ps.val_ids.end());
        ps.val_ids.erase(std::unique(ps.val_ids.begin(), ps.val_ids.end()), ps.val_ids.end());
    } else {
        ps = patient_split(records, ratio, seed);
    }

    std::vector<ExpandedSample> all = expand_eyes(records, ps);
    std::vector<ExpandedSample> chosen;
    const SplitTag want = split == "train" ? SplitTag::Train : SplitTag::Val;
    for (auto& s : all)
        if (s.split == want) chosen.push_back(s);
    if (chosen.empty()) throw ConfigError("eval: selected split is empty");

    ImageCache images(chosen, fs::path(manifest).parent_path().string());
    TensorD scores({static_cast<i64>(chosen.size()),
                    static_cast<i64>(model.cfg.num_classes)});
    TensorD labels(scores.shape);
    const size_t vb = 32;
    for (size_t start = 0; start < chosen.size(); start += vb) {
        const size_t end = std::min(chosen.size(), start + vb);
        Tensor batch({static_cast<i64>(end - start), 3, model.cfg.input_size,
                      model.cfg.input_size});
        for (size_t i = start; i < end; ++i) {
            Tensor img = preprocess_eval(to_float_image(images[i]), model.cfg.input_size);
            std::copy(img.v.begin(), img.v.end(),
                      batch.v.begin() + (i - start) * img.v.size());
        }
        Tensor logits = forward_eval(model, batch);
        for (size_t i = start; i < end; ++i)
            for (int c = 0; c < model.cfg.num_classes; ++c) {
                scores.at(static_cast<i64>(i), c) =
                    sigmoid_scalar(static_cast<double>(logits.at(static_cast<i64>(i - start), c)));
                labels.at(static_cast<i64>(i), c) = chosen[i].labels[static_cast<size_t>(c)];
            }
    }
    MetricsReport rep = evaluate_multilabel(scores, labels);
    json j = metrics_to_json(rep);
    j["samples"] = chosen.size();
    j["split"] = split;
    write_text((fs::path(out) / "metrics.json").string(), j.dump(2) + "\n");
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_profile(const std::vector<std::string>& sets, const std::string& out) {
    RunConfig cfg;
    apply_overrides(cfg, sets);
    ModelConfig mc = cfg.model_config();
    Profile p = profile_model(mc, mc.input_size);

    std::ostringstream table, csv;
    csv << "component,params,flops\n";
    table << "component        params        flops\n";
    for (const auto& it : p.items) {
        char line[128];
        std::snprintf(line, sizeof(line), "%-12s %10lld %12lld\n", it.component.c_str(),
                      static_cast<long long>(it.params), static_cast<long long>(it.flops));
        table << line;
        csv << it.component << "," << it.params << "," << it.flops << "\n";
    }
    char tot[160];
    std::snprintf(tot, sizeof(tot), "%-12s %10lld %12lld\n", "total",
                  static_cast<long long>(p.total_params),
                  static_cast<long long>(p.total_flops));
    table << tot;
    csv << "total," << p.total_params << "," << p.total_flops << "\n";

    const bool default_arch = mc.dim == 96 && mc.stem_width == 192 && mc.num_self_blocks == 6 &&
                              mc.input_size == 448 && mc.num_classes == 8;
    if (default_arch) {
        const double pub_params = mc.use_energy ? 851900.0 : 820000.0;
        const double pub_flops = 3.327e9;
        char cmp[256];
        std::snprintf(cmp, sizeof(cmp),
                      "published_params=%.0f delta=%+.2f%%\n"
                      "published_gflops=%.3f delta=%+.2f%% (with-energy reference)\n",
                      pub_params, 100.0 * (p.total_params - pub_params) / pub_params, 3.327,
                      100.0 * (p.total_flops - pub_flops) / pub_flops);
        table << cmp;
    } else {
        table << "published totals: n/a for non-default configuration\n";
    }
    table << "interaction_multiplies_per_image=" << p.interaction_multiplies << "\n";
    std::cout << table.str();
    if (!out.empty()) {
        fs::create_directories(out);
        write_text((fs::path(out) / "profile.csv").string(), csv.str());
        write_text((fs::path(out) / "profile.txt").string(), table.str());
    }
    return 0;
}

int cmd_bench(const std::vector<std::string>& sets, int repeats, int warmup, u64 seed,
              const std::string& out) {
    RunConfig cfg;
    apply_overrides(cfg, sets);
    BenchReport rep = run_bench(cfg.model_config(), repeats, warmup, seed);
    const std::string text = bench_report_text(rep);
    std::cout << text;
    if (!out.empty()) {
        fs::create_directories(out);
        write_text((fs::path(out) / "bench.txt").string(), text);
    }
    return rep.kernel_equivalent ? 0 : 1;
}

int cmd_split(const std::string& manifest, double ratio, u64 seed, const std::string& out,
              bool force) {
    prepare_out_dir(out, force);
    auto records = parse_manifest(manifest, 8);
    PatientSplit ps = patient_split(records, ratio, seed);
    for (const auto& w : ps.warnings) std::cerr << "warning: " << w << "\n";
    {
        std::ofstream tr(fs::path(out) / "train_patients.txt");
        for (const auto& id : ps.train_ids) tr << id << "\n";
        std::ofstream va(fs::path(out) / "val_patients.txt");
        for (const auto& id : ps.val_ids) va << id << "\n";
    }
    auto samples = expand_eyes(records, ps);
    std::ofstream tr(fs::path(out) / "train_samples.csv");
    std::ofstream va(fs::path(out) / "val_samples.csv");
    tr << "patient_id,path\n";
    va << "patient_id,path\n";
    i64 ntr = 0, nva = 0;
    for (const auto& s : samples) {
        ((s.split == SplitTag::Train) ? tr : va) << s.patient_id << "," << s.image_path << "\n";
        (s.split == SplitTag::Train ? ntr : nva)++;
    }
    std::cout << "train patients " << ps.train_ids.size() << " (" << ntr << " samples), val "
              << ps.val_ids.size() << " (" << nva << " samples)\n";
    return 0;
}

int cmd_synth(const std::string& out, int patients, int size, u64 seed, bool force) {
    prepare_out_dir(out, force);
    SynthSpec spec;
    spec.num_patients = patients;
    spec.image_size = size;
    spec.seed = seed;
    SynthDataset ds = synth_generate(spec, out);
    std::cout << "wrote " << ds.num_images << " images for " << spec.num_patients
              << " patients\n"
              << ds.manifest_path << "\n";
    return 0;
}

int cmd_gradcheck(const std::string& scope, u64 seed) {
    std::vector<GradCheckReport> reps;
    if (scope == "ops") reps = gradcheck_ops(seed);
    else if (scope == "blocks") reps = gradcheck_blocks(seed);
    else if (scope == "model") reps.push_back(gradcheck_model(seed));
    else throw ConfigError("gradcheck: scope must be ops, blocks or model");
    bool ok = true;
    for (const auto& r : reps) {
        std::printf("%-24s %s  max_rel_err=%.3e  h=%.0e  tol=%.0e\n", r.op.c_str(),
                    r.pass ? "PASS" : "FAIL", r.max_rel_err, r.h, r.tolerance);
        ok = ok && r.pass;
    }
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dual-resolution rolling-interaction backbone toolkit"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags may appear after the subcommand

    int threads = 1;
    app.add_option("--threads", threads, "worker threads (1 = reference mode)")
        ->capture_default_str();

    std::string config_path, data_dir, out_dir, checkpoint, manifest, split = "val",
                split_file, scope = "ops";
    std::vector<std::string> sets;
    bool force = false, quiet = false;
    double ratio = 0.8;
    u64 seed = 42;
    bool seed_given = false;
    int repeats = 10, warmup = 2, patients = 800, size = 112;

    auto* train = app.add_subcommand("train", "train on a manifest dataset");
    train->add_option("--config", config_path, "run config file");
    train->add_option("--set", sets, "override config key=value");
    train->add_option("--data", data_dir, "dataset dir containing manifest.csv")->required();
    train->add_option("--out", out_dir, "output dir")->required();
    train->add_option("--seed", seed)->each([&](const std::string&) { seed_given = true; });
    train->add_flag("--force", force, "reuse a non-empty output dir");
    train->add_flag("--quiet", quiet);

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    eval->add_option("--checkpoint", checkpoint)->required();
    eval->add_option("--manifest", manifest)->required();
    eval->add_option("--split", split, "train or val")->check(CLI::IsMember({"train", "val"}));
    eval->add_option("--split-file", split_file, "patient-id list for the chosen split");
    eval->add_option("--ratio", ratio);
    eval->add_option("--seed", seed);
    eval->add_option("--out", out_dir)->required();
    eval->add_flag("--force", force);

    auto* profile = app.add_subcommand("profile", "parameter and FLOP budget");
    profile->add_option("--set", sets);
    profile->add_option("--out", out_dir);

    auto* bench = app.add_subcommand("bench", "CPU latency benchmark");
    bench->add_option("--set", sets);
    bench->add_option("--repeats", repeats);
    bench->add_option("--warmup", warmup);
    bench->add_option("--seed", seed);
    bench->add_option("--out", out_dir);

    auto* split_cmd = app.add_subcommand("split", "patient-level stratified split");
    split_cmd->add_option("--manifest", manifest)->required();
    split_cmd->add_option("--ratio", ratio);
    split_cmd->add_option("--seed", seed);
    split_cmd->add_option("--out", out_dir)->required();
    split_cmd->add_flag("--force", force);

    auto* synth = app.add_subcommand("synth", "generate the synthetic dataset");
    synth->add_option("--out", out_dir)->required();
    synth->add_option("--patients", patients);
    synth->add_option("--size", size);
    synth->add_option("--seed", seed);
    synth->add_flag("--force", force);

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suites");
    gradcheck->add_option("--scope", scope)->check(CLI::IsMember({"ops", "blocks", "model"}));
    gradcheck->add_option("--seed", seed);

    CLI11_PARSE(app, argc, argv);
    worker_threads() = std::max(1, threads);

    try {
        if (train->parsed()) {
            if (seed_given) sets.push_back("seed=" + std::to_string(seed));
            return cmd_train(config_path, sets, data_dir, out_dir, force, quiet);
        }
        if (eval->parsed())
            return cmd_eval(checkpoint, manifest, split, split_file, ratio, seed, out_dir,
                            force);
        if (profile->parsed()) return cmd_profile(sets, out_dir);
        if (bench->parsed()) return cmd_bench(sets, repeats, warmup, seed, out_dir);
        if (split_cmd->parsed()) return cmd_split(manifest, ratio, seed, out_dir, force);
        if (synth->parsed()) return cmd_synth(out_dir, patients, size, seed, force);
        if (gradcheck->parsed()) return cmd_gradcheck(scope, seed);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
