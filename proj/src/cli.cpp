#include "ttp/cli.hpp"

#include "ttp/attack.hpp"
#include "ttp/config.hpp"
#include "ttp/gradcheck.hpp"
#include "ttp/image_io.hpp"
#include "ttp/parallel.hpp"
#include "ttp/version.hpp"
#include "ttp/weights.hpp"

#include <CLI11.hpp>
#include <glob.h>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

namespace ttp {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

struct UsageError : Error {
    explicit UsageError(const std::string& what) : Error("UsageError", what) {}
};

void log(const std::string& msg) { std::cerr << "ttp: " << msg << '\n'; }

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out || !(out << text)) throw IoFailure("cannot write " + path.string());
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoFailure("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw MalformedFile(path.string() + ": " + e.what());
    }
}

fs::path sidecar(const fs::path& weights) { return fs::path(weights.string() + ".json"); }

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::vector<fs::path> expand_glob(const std::string& pattern) {
    glob_t g{};
    const int rc = ::glob(pattern.c_str(), 0, nullptr, &g);
    std::vector<fs::path> out;
    if (rc == 0) {
        for (std::size_t i = 0; i < g.gl_pathc; ++i) out.emplace_back(g.gl_pathv[i]);
    }
    globfree(&g);
    if (rc != 0 && rc != GLOB_NOMATCH) throw IoFailure("glob failed for '" + pattern + "'");
    return out;
}

LabeledImageSet load_split(const fs::path& dir, const Settings& s, Split split) {
    LabeledImageSet set = load_dataset(dir, s.data_format, split);
    if (s.data_limit) set = truncate(set, s.data_limit);
    log("loaded " + std::to_string(set.size()) + " " + std::string(to_string(split)) + " samples from " + dir.string());
    return set;
}

// Config-file values overlaid with command-line flags, the latter winning.
struct ConfigSources {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::vector<std::pair<std::string, std::string>> flags;

    void bind(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
        app->add_option_function<std::string>(flag, [this, key](const std::string& v) { flags.emplace_back(key, v); },
                                              help + " [" + key + "]");
    }
    void bind_flag(CLI::App* app, const std::string& flag, const std::string& key, const std::string& value,
                   const std::string& help) {
        app->add_flag_callback(flag, [this, key, value] { flags.emplace_back(key, value); }, help + " [" + key + "]");
    }

    RunConfig resolve() const {
        RunConfig cfg = config_path.empty() ? RunConfig() : RunConfig::load(config_path);
        RunConfig over;
        for (const auto& [k, v] : flags) over.set(k, v);
        if (seed) over.set("seed", std::to_string(*seed));
        cfg.merge(over);
        return cfg;
    }
};

struct TaggedFile {
    fs::path path;
    int target = -1;
    std::string surrogate;
};

TaggedFile tag_generator_file(const fs::path& path) {
    TaggedFile t{path, -1, {}};
    if (fs::exists(sidecar(path))) {
        const json meta = read_json(sidecar(path));
        if (meta.contains("target")) t.target = meta["target"].get<int>();
        t.surrogate = meta.value("surrogate", std::string());
    }
    if (t.target < 0) {
        if (auto tag = parse_checkpoint_name(path.filename().string())) {
            t.target = tag->target_class;
            if (t.surrogate.empty()) t.surrogate = tag->surrogate;
        }
    }
    if (t.target < 0) throw MissingTargetTag(path.string() + " carries no target class (no sidecar, unrecognised name)");
    return t;
}

// ---------------------------------------------------------------------------

struct TrainDiscArgs {
    std::string data, out;
};

void cmd_train_disc(const TrainDiscArgs& a, const RunConfig& cfg) {
    const Settings s = cfg.settings();
    const LabeledImageSet train = load_split(a.data, s, Split::Train);
    const LabeledImageSet test = load_split(a.data, s, Split::Test);
    DiscConfig arch = s.disc_arch;
    arch.channels = train.channels();
    arch.height = train.height();
    arch.width = train.width();
    arch.num_classes = static_cast<std::size_t>(train.num_classes);
    auto result = train_discriminator(train, &test, arch, s.disc, [](const DiscEpochRecord& r) {
        std::ostringstream os;
        os << "epoch " << r.epoch << " loss " << r.train_loss << " test accuracy " << r.test_accuracy;
        log(os.str());
    });
    save_weights(result.model, a.out);
    json meta;
    meta["kind"] = "discriminator";
    meta["arch"] = to_string(arch.arch);
    meta["test_accuracy"] = result.test_accuracy;
    meta["config"] = cfg.canonical();
    meta["config_fingerprint"] = cfg.fingerprint();
    meta["build"] = build_fingerprint();
    write_text(sidecar(a.out), meta.dump(2) + "\n");
    log("saved " + a.out + " (test accuracy " + std::to_string(result.test_accuracy) + ")");
}

struct TrainGenArgs {
    std::string discs, data, out, telemetry, checkpoint_dir;
};

void cmd_train_gen(const TrainGenArgs& a, const RunConfig& cfg) {
    Settings s = cfg.settings();
    const auto disc_files = split_list(a.discs);
    if (disc_files.empty()) throw UsageError("--disc needs at least one file");
    DiscriminatorEnsemble<float> discs;
    std::string joined;
    for (const auto& f : disc_files) {
        discs.members.push_back(load_discriminator(f));
        discs.members.back().freeze();
        joined += (joined.empty() ? "" : "+") + fs::path(f).stem().string();
    }
    if (!cfg.has("train.surrogate_tag")) s.gen.surrogate_tag = joined;
    if (!a.checkpoint_dir.empty()) {
        fs::create_directories(a.checkpoint_dir);
        s.gen.checkpoint_dir = a.checkpoint_dir;
    }

    auto train = std::make_shared<const LabeledImageSet>(load_split(a.data, s, Split::Train));
    StreamPair streams = make_streams(train, s.gen.target_class, s.gen.batch_size, s.gen.seed);

    std::ofstream telemetry_file;
    std::ostream* telemetry = &std::cout;
    if (!a.telemetry.empty()) {
        telemetry_file.open(a.telemetry);
        if (!telemetry_file) throw IoFailure("cannot open " + a.telemetry);
        telemetry = &telemetry_file;
    }
    log("config fingerprint " + cfg.fingerprint() + ", surrogate " + s.gen.surrogate_tag);
    TrainHooks hooks;
    hooks.on_step = [&](const StepRecord& r) { *telemetry << telemetry_line(r) << '\n'; };
    hooks.on_epoch = [](std::size_t epoch, Generator<float>&) { log("finished epoch " + std::to_string(epoch)); };
    auto result = train_generator(s.gen, discs, streams.source, streams.target, hooks);
    telemetry->flush();

    save_weights(result.generator, a.out);
    json meta;
    meta["kind"] = "generator";
    meta["target"] = s.gen.target_class;
    meta["eps255"] = s.gen.budget.eps255();
    meta["surrogate"] = s.gen.surrogate_tag;
    meta["loss"] = to_string(s.gen.loss.objective);
    meta["steps"] = result.telemetry.size();
    meta["config"] = cfg.canonical();
    meta["config_fingerprint"] = cfg.fingerprint();
    meta["build"] = build_fingerprint();
    write_text(sidecar(a.out), meta.dump(2) + "\n");
    log("saved " + a.out);
}

struct AttackArgs {
    std::string gen, data, out;
    std::size_t previews = 8;
};

void cmd_attack(const AttackArgs& a, const RunConfig& cfg) {
    const Settings s = cfg.settings();
    Generator<float> gen = load_generator(a.gen);
    const LabeledImageSet test = load_split(a.data, s, Split::Test);
    std::vector<Tensor<float>> parts;
    for (std::size_t b = 0; b < test.size(); b += s.eval_batch) {
        const Tensor<float> clean = test.images.slice_rows(b, std::min(test.size(), b + s.eval_batch));
        parts.push_back(craft(gen, clean, s.gen.budget, s.gen.kernel).images);
    }
    std::vector<const Tensor<float>*> ptrs;
    for (const auto& p : parts) ptrs.push_back(&p);
    const Tensor<float> adv = concat_rows<float>(ptrs);
    check_budget(adv, test.images, s.gen.budget);

    Tensor<float> labels({test.size()});
    for (std::size_t i = 0; i < test.size(); ++i) labels[i] = static_cast<float>(test.labels[i]);
    fs::create_directories(a.out);
    write_tensors(fs::path(a.out) / "adversaries.ttpw", {{"adv", adv}, {"clean", test.images}, {"labels", labels}});

    // clean | adversarial | perturbation rescaled to [0, 1]
    const double eps = std::max(s.gen.budget.epsilon, 1e-12);
    const Shape one{test.channels(), test.height(), test.width()};
    for (std::size_t i = 0; i < std::min(a.previews, test.size()); ++i) {
        const Tensor<float> c = test.images.slice_rows(i, i + 1).reshaped(one);
        const Tensor<float> x = adv.slice_rows(i, i + 1).reshaped(one);
        Tensor<float> d(one);
        for (std::size_t k = 0; k < d.size(); ++k) d[k] = static_cast<float>(0.5 + (x[k] - c[k]) / (2.0 * eps));
        char name[32];
        std::snprintf(name, sizeof name, "preview_%04zu.png", i);
        write_png_row(fs::path(a.out) / name, {c, x, d});
    }
    log("wrote " + std::to_string(test.size()) + " adversaries to " + a.out);
}

void emit_report(const TransferReport& report, const std::string& path) {
    json j = to_json(report);
    const std::string text = j.dump(2) + "\n";
    if (path.empty()) {
        std::cout << text;
    } else {
        write_text(path, text);
        log("report written to " + path);
    }
    std::cout << "mean target accuracy " << report.mean_target_accuracy << (report.white_box ? " (white-box)" : "")
              << '\n';
}

struct EvalArgs {
    std::string gens, victim, data, report, victim_tag, defense = "none";
};

void cmd_eval(const EvalArgs& a, const RunConfig& cfg) {
    const Settings s = cfg.settings();
    const auto files = expand_glob(a.gens);
    if (files.empty()) throw IoFailure("no generator matches '" + a.gens + "'");

    std::vector<TaggedFile> tags;
    std::set<int> seen;
    std::string surrogate;
    for (const auto& f : files) {
        const TaggedFile& t = tags.emplace_back(tag_generator_file(f));
        if (!seen.insert(t.target).second) throw InvalidArgument("two generators for target " + std::to_string(t.target));
        if (tags.size() > 1 && t.surrogate != surrogate) {
            throw InvalidArgument("generators come from different surrogates: " + surrogate + ", " + t.surrogate);
        }
        surrogate = t.surrogate;
    }
    std::vector<Generator<float>> gens;
    gens.reserve(tags.size());
    std::vector<TaggedGenerator> tagged;
    for (const auto& t : tags) tagged.push_back({&gens.emplace_back(load_generator(t.path)), t.target, t.surrogate});

    Discriminator<float> victim = load_discriminator(a.victim);
    const LabeledImageSet test = load_split(a.data, s, Split::Test);
    EvalOptions opts;
    opts.budget = s.gen.budget;
    opts.defense = parse_defense(a.defense);
    opts.victim_tag = a.victim_tag.empty() ? fs::path(a.victim).stem().string() : a.victim_tag;
    opts.surrogate_tag = surrogate;
    opts.batch_size = s.eval_batch;
    emit_report(evaluate_transfer(tagged, victim, test, opts, s.gen.kernel), a.report);
}

struct BaselineArgs {
    std::string method, surrogate, victim, targets, data, report, victim_tag, defense = "none";
};

void cmd_baseline(const BaselineArgs& a, const RunConfig& cfg) {
    const Settings s = cfg.settings();
    if (a.method != "pgd" && a.method != "mim") throw UsageError("--method must be pgd or mim");
    std::vector<int> targets;
    for (const auto& t : split_list(a.targets)) {
        try {
            targets.push_back(std::stoi(t));
        } catch (const std::exception&) {
            throw UsageError("bad target '" + t + "'");
        }
    }
    Discriminator<float> surrogate = load_discriminator(a.surrogate);
    Discriminator<float> victim = load_discriminator(a.victim);
    const LabeledImageSet test = load_split(a.data, s, Split::Test);
    EvalOptions opts;
    opts.budget = s.gen.budget;
    opts.defense = parse_defense(a.defense);
    opts.victim_tag = a.victim_tag.empty() ? fs::path(a.victim).stem().string() : a.victim_tag;
    opts.surrogate_tag = fs::path(a.surrogate).stem().string();
    opts.attack_tag = a.method;
    opts.batch_size = s.eval_batch;
    const bool mim = a.method == "mim";
    CraftFn fn = [&](int t, const Tensor<float>& clean) {
        return (mim ? mim_targeted : pgd_targeted)(surrogate, clean, t, s.gen.budget, s.baseline).images;
    };
    emit_report(evaluate_attack(targets, fn, victim, test, opts), a.report);
}

struct ReportArgs {
    std::vector<std::string> inputs;
    std::string out, csv;
};

void cmd_report(const ReportArgs& a) {
    std::vector<TransferReport> reports;
    for (const auto& f : a.inputs) reports.push_back(report_from_json(read_json(f)));
    const TransferMatrix m = assemble_matrix(reports);
    if (!a.out.empty()) write_text(a.out, m.to_json().dump(2) + "\n");
    if (!a.csv.empty()) write_text(a.csv, m.to_csv());
    std::cout << m.to_csv();
    // black-box summary: white-box cells are shown in the grid but never averaged
    for (std::size_t i = 0; i < m.surrogates.size(); ++i) {
        double sum = 0.0;
        std::size_t count = 0;
        for (const auto& cell : m.cells[i]) {
            if (!cell.victim_tag.empty() && !cell.white_box) {
                sum += cell.mean_target_accuracy;
                ++count;
            }
        }
        if (count) std::cout << m.surrogates[i] << " black-box mean " << sum / static_cast<double>(count) << '\n';
    }
}

struct GradCheckArgs {
    std::size_t probes = 100;
    double tolerance = 1e-3;
};

int cmd_gradcheck(const GradCheckArgs& a, const RunConfig& cfg) {
    GradCheckConfig gc;
    gc.seed = cfg.has("seed") ? cfg.settings().seed : gc.seed;
    gc.probes = a.probes;
    const GradCheckResult r = run_gradcheck(gc);
    std::cout << "gradcheck seed " << gc.seed << ": " << r.probes.size() << " probes over " << r.parameter_count
              << " parameters, " << r.refined_probes << " refined at a clamp boundary\n";
    std::cout << "max rel. err " << r.max_rel_error << (r.max_rel_error <= a.tolerance ? " ok" : " FAILED") << '\n';
    return r.max_rel_error <= a.tolerance ? 0 : 2;
}

void print_error(const std::string& kind, const std::string& message) {
    std::cerr << json{{"error", kind}, {"message", message}}.dump() << '\n';
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"Transferable targeted perturbations: train generators, attack and evaluate transfer", "ttp"};
    app.set_version_flag("--version", build_fingerprint());
    app.require_subcommand(1);
    app.fallthrough();

    ConfigSources src;
    app.add_option("--config", src.config_path, "TOML-style config file (dotted keys)");
    app.add_option("--seed", src.seed, "root seed for every random stream [seed]");

    auto* train_disc = app.add_subcommand("train-disc", "train a CIFAR-scale classifier");
    TrainDiscArgs td;
    src.bind(train_disc, "--arch", "disc.arch", "convnet-a | resnet-s | toy");
    train_disc->add_option("--data", td.data, "dataset directory")->required();
    train_disc->add_option("--out", td.out, "output weight file")->required();
    src.bind(train_disc, "--epochs", "disc.epochs", "training epochs");
    src.bind(train_disc, "--batch", "disc.batch_size", "batch size");
    src.bind(train_disc, "--lr", "disc.lr", "Adam learning rate");
    src.bind(train_disc, "--width", "disc.width", "base channel width");
    src.bind(train_disc, "--min-acc", "disc.min_accuracy", "fail below this test accuracy");
    src.bind(train_disc, "--format", "data.format", "cifar10-bin | idx");
    src.bind(train_disc, "--limit", "data.limit", "use at most this many samples per split");

    auto* train_gen = app.add_subcommand("train-gen", "train a target-specific generator against frozen discriminators");
    TrainGenArgs tg;
    train_gen->add_option("--disc", tg.discs, "discriminator weight file(s), comma separated")->required();
    train_gen->add_option("--data", tg.data, "dataset directory")->required();
    train_gen->add_option("--out", tg.out, "output weight file")->required();
    train_gen->add_option("--telemetry", tg.telemetry, "NDJSON loss log (default stdout)");
    train_gen->add_option("--checkpoint-dir", tg.checkpoint_dir, "per-epoch checkpoints");
    src.bind(train_gen, "--target", "train.target", "target class");
    src.bind(train_gen, "--eps", "budget.eps", "l-inf budget on the 0-255 scale");
    src.bind(train_gen, "--epochs", "train.epochs", "training epochs");
    src.bind(train_gen, "--batch", "train.batch_size", "batch size");
    src.bind(train_gen, "--lr", "train.lr", "Adam learning rate");
    src.bind(train_gen, "--loss", "loss.objective", "ttp | ce");
    src.bind(train_gen, "--steps-per-epoch", "train.steps_per_epoch", "optimizer steps per epoch");
    src.bind(train_gen, "--max-steps", "train.max_steps", "cap on total optimizer steps");
    src.bind(train_gen, "--surrogate-tag", "train.surrogate_tag", "name recorded for the surrogate");
    src.bind(train_gen, "--format", "data.format", "cifar10-bin | idx");
    src.bind(train_gen, "--limit", "data.limit", "use at most this many samples per split");
    src.bind_flag(train_gen, "--no-aug", "loss.use_aug", "false", "drop the augmented distribution term");
    src.bind_flag(train_gen, "--no-sim", "loss.use_sim", "false", "drop the neighbourhood similarity term");
    src.bind_flag(train_gen, "--no-smooth", "smoothing.enabled", "false", "project without smoothing");

    auto* attack = app.add_subcommand("attack", "perturb a test split with a trained generator");
    AttackArgs at;
    attack->add_option("--gen", at.gen, "generator weight file")->required();
    attack->add_option("--data", at.data, "dataset directory")->required();
    attack->add_option("--out", at.out, "output directory")->required();
    attack->add_option("--previews", at.previews, "number of PNG previews");
    src.bind(attack, "--eps", "budget.eps", "l-inf budget on the 0-255 scale");
    src.bind(attack, "--format", "data.format", "cifar10-bin | idx");
    src.bind(attack, "--limit", "data.limit", "use at most this many samples");
    src.bind_flag(attack, "--no-smooth", "smoothing.enabled", "false", "project without smoothing");

    auto* eval = app.add_subcommand("eval", "measure target accuracy of generators on a victim");
    EvalArgs ev;
    eval->add_option("--gens", ev.gens, "glob of generator weight files, one per target")->required();
    eval->add_option("--victim", ev.victim, "victim weight file")->required();
    eval->add_option("--data", ev.data, "dataset directory")->required();
    eval->add_option("--report", ev.report, "JSON report path (default stdout)");
    eval->add_option("--defense", ev.defense, "none | median-blur");
    eval->add_option("--victim-tag", ev.victim_tag, "victim name (default file stem)");
    src.bind(eval, "--eps", "budget.eps", "l-inf budget on the 0-255 scale");
    src.bind(eval, "--format", "data.format", "cifar10-bin | idx");
    src.bind(eval, "--limit", "data.limit", "use at most this many samples");
    src.bind(eval, "--batch", "eval.batch_size", "evaluation batch size");
    src.bind_flag(eval, "--no-smooth", "smoothing.enabled", "false", "project without smoothing");

    auto* baseline = app.add_subcommand("baseline", "iterative targeted PGD / MIM transfer baseline");
    BaselineArgs bl;
    baseline->add_option("--method", bl.method, "pgd | mim")->required();
    baseline->add_option("--surrogate", bl.surrogate, "surrogate weight file")->required();
    baseline->add_option("--victim", bl.victim, "victim weight file")->required();
    baseline->add_option("--targets", bl.targets, "comma-separated target classes")->required();
    baseline->add_option("--data", bl.data, "dataset directory")->required();
    baseline->add_option("--report", bl.report, "JSON report path (default stdout)");
    baseline->add_option("--defense", bl.defense, "none | median-blur");
    baseline->add_option("--victim-tag", bl.victim_tag, "victim name (default file stem)");
    src.bind(baseline, "--eps", "budget.eps", "l-inf budget on the 0-255 scale");
    src.bind(baseline, "--steps", "baseline.steps", "iterations");
    src.bind(baseline, "--alpha", "baseline.alpha", "step size on the 0-255 scale");
    src.bind(baseline, "--format", "data.format", "cifar10-bin | idx");
    src.bind(baseline, "--limit", "data.limit", "use at most this many samples");

    auto* report = app.add_subcommand("report", "merge transfer reports into a surrogate x victim matrix");
    ReportArgs rp;
    report->add_option("inputs", rp.inputs, "report files")->required()->check(CLI::ExistingFile);
    report->add_option("--out", rp.out, "matrix JSON");
    report->add_option("--csv", rp.csv, "matrix CSV");

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of the generator objective");
    GradCheckArgs gc;
    gradcheck->add_option("--probes", gc.probes, "number of probed parameters");
    gradcheck->add_option("--tolerance", gc.tolerance, "maximum accepted relative error");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    RunConfig cfg;
    try {
        cfg = src.resolve();
    } catch (const Error& e) {
        print_error(e.kind(), e.what());
        return 1;
    }

    try {
        if (train_disc->parsed()) cmd_train_disc(td, cfg);
        else if (train_gen->parsed()) cmd_train_gen(tg, cfg);
        else if (attack->parsed()) cmd_attack(at, cfg);
        else if (eval->parsed()) cmd_eval(ev, cfg);
        else if (baseline->parsed()) cmd_baseline(bl, cfg);
        else if (report->parsed()) cmd_report(rp);
        else if (gradcheck->parsed()) return cmd_gradcheck(gc, cfg);
        return 0;
    } catch (const UsageError& e) {
        print_error(e.kind(), e.what());
        return 1;
    } catch (const Error& e) {
        print_error(e.kind(), e.what());
        return 2;
    } catch (const std::exception& e) {
        print_error("InternalError", e.what());
        return 2;
    }
}

int run_cli(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace ttp
