// Command-line front end: dataset synthesis, training, evaluation, map
// prediction, and gradient checking. A flat JSON config file supplies
// defaults; flags override it. Exit codes: 0 success, 1 runtime failure,
// 2 argument/config error.

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <set>
#include <string>

#include "biclstm/biclstm.hpp"

using nlohmann::json;
using namespace biclstm;

namespace {

struct RunConfig {
    // model
    std::size_t patch = 8;
    std::size_t bands = 0; // 0: take from the cube
    std::size_t hidden = 32;
    std::size_t kernel = 3;
    double dropout = 0.6;
    std::size_t group = 1;
    std::string feature_mode = "full_sequence";
    std::size_t classes = 0; // 0: take from the labels
    bool bidirectional = true;

    // training
    double lr = 1e-3;
    std::size_t batch = 16;
    std::size_t epochs = 100;
    std::string optimizer = "adam";
    double momentum = 0.9;
    double beta1 = 0.9, beta2 = 0.999;
    double clip = 5.0;
    bool augment = false;
    std::uint64_t seed = 1;
    std::size_t threads = 1;

    // split
    double train_fraction = 0.1;

    // threads deliberately left out: the worker count never changes results,
    // so it is not part of the experiment identity echoed into artifacts
    json to_json() const {
        return json{{"patch", patch},       {"bands", bands},
                    {"hidden", hidden},     {"kernel", kernel},
                    {"dropout", dropout},   {"group", group},
                    {"feature_mode", feature_mode}, {"classes", classes},
                    {"bidirectional", bidirectional},
                    {"lr", lr},             {"batch", batch},
                    {"epochs", epochs},     {"optimizer", optimizer},
                    {"momentum", momentum}, {"beta1", beta1},
                    {"beta2", beta2},       {"clip", clip},
                    {"augment", augment},   {"seed", seed},
                    {"train_fraction", train_fraction}};
    }

    ModelConfig model_config(const HsiCube& cube) const {
        ModelConfig m;
        m.patch = patch;
        m.bands = bands == 0 ? cube.l : bands;
        m.hidden = hidden;
        m.kernel = kernel;
        m.dropout = dropout;
        m.group = group;
        m.classes = classes == 0 ? cube.num_classes() : classes;
        m.bidirectional = bidirectional;
        if (feature_mode == "full_sequence")
            m.feature_mode = FeatureMode::full_sequence;
        else if (feature_mode == "last_state")
            m.feature_mode = FeatureMode::last_state;
        else
            throw argument_error("unknown feature_mode \"" + feature_mode + "\"");
        if (m.bands != cube.l)
            throw argument_error("config asks for " + std::to_string(m.bands) + " bands but the cube has " +
                                 std::to_string(cube.l));
        m.validate();
        return m;
    }

    TrainConfig train_config() const {
        TrainConfig t;
        t.lr = lr;
        t.batch = batch;
        t.epochs = epochs;
        if (optimizer == "adam")
            t.optimizer = Optimizer::adam;
        else if (optimizer == "sgd_momentum")
            t.optimizer = Optimizer::sgd_momentum;
        else
            throw argument_error("unknown optimizer \"" + optimizer + "\"");
        t.momentum = momentum;
        t.beta1 = beta1;
        t.beta2 = beta2;
        t.clip_norm = clip;
        t.augment = augment;
        t.seed = seed;
        t.threads = threads;
        t.validate();
        return t;
    }
};

// Applies the config file to every setting the command line left untouched.
// Unknown keys are rejected.
void merge_config_file(const std::string& path, RunConfig& rc, const CLI::App& cmd) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open config file " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw argument_error("config file " + path + ": " + e.what());
    }
    if (!j.is_object()) throw argument_error("config file " + path + " must hold a JSON object");

    // config keys use underscores, flags use dashes
    auto flag_given = [&](std::string flag) {
        for (char& ch : flag)
            if (ch == '_') ch = '-';
        const CLI::Option* opt = cmd.get_option_no_throw("--" + flag);
        return opt != nullptr && opt->count() > 0;
    };

    static const std::set<std::string> keys = {
        "patch",     "bands",     "hidden",   "kernel",        "dropout",   "group",
        "feature_mode", "classes", "bidirectional", "lr",      "batch",     "epochs",
        "optimizer", "momentum",  "beta1",    "beta2",         "clip",      "augment",
        "seed",      "threads",   "train_fraction"};
    for (const auto& [key, value] : j.items())
        if (!keys.count(key)) throw argument_error("config file " + path + ": unknown key \"" + key + "\"");

    auto take = [&](const char* key, auto& target) {
        if (j.contains(key) && !flag_given(key)) j.at(key).get_to(target);
    };
    take("patch", rc.patch);
    take("bands", rc.bands);
    take("hidden", rc.hidden);
    take("kernel", rc.kernel);
    take("dropout", rc.dropout);
    take("group", rc.group);
    take("feature_mode", rc.feature_mode);
    take("classes", rc.classes);
    take("bidirectional", rc.bidirectional);
    take("lr", rc.lr);
    take("batch", rc.batch);
    take("epochs", rc.epochs);
    take("optimizer", rc.optimizer);
    take("momentum", rc.momentum);
    take("beta1", rc.beta1);
    take("beta2", rc.beta2);
    take("clip", rc.clip);
    take("augment", rc.augment);
    take("seed", rc.seed);
    take("threads", rc.threads);
    take("train_fraction", rc.train_fraction);
}

void add_run_options(CLI::App* cmd, RunConfig& rc, std::string& config_path) {
    cmd->add_option("--config", config_path, "flat JSON config file; flags override its values");
    cmd->add_option("--patch", rc.patch, "patch size p (power of two >= 8)");
    cmd->add_option("--bands", rc.bands, "spectral bands to expect (0 = from cube)");
    cmd->add_option("--hidden", rc.hidden, "hidden channels per CLSTM layer");
    cmd->add_option("--kernel", rc.kernel, "convolution kernel size (odd)");
    cmd->add_option("--dropout", rc.dropout, "dropout rate in [0,1)");
    cmd->add_option("--group", rc.group, "bands per sequence step");
    cmd->add_option("--feature-mode", rc.feature_mode, "full_sequence or last_state")
        ->option_text("MODE");
    cmd->add_option("--classes", rc.classes, "class count (0 = from labels)");
    cmd->add_option("--bidirectional", rc.bidirectional, "false zeroes the backward branch");
    cmd->add_option("--lr", rc.lr, "learning rate");
    cmd->add_option("--batch", rc.batch, "mini-batch size");
    cmd->add_option("--epochs", rc.epochs, "training epochs");
    cmd->add_option("--optimizer", rc.optimizer, "adam or sgd_momentum");
    cmd->add_option("--momentum", rc.momentum, "sgd momentum");
    cmd->add_option("--beta1", rc.beta1, "adam beta1");
    cmd->add_option("--beta2", rc.beta2, "adam beta2");
    cmd->add_option("--clip", rc.clip, "global gradient norm clip");
    cmd->add_option("--augment", rc.augment, "8x flip/rotate augmentation of training samples");
    cmd->add_option("--seed", rc.seed, "seed for split/init/shuffle/dropout");
    cmd->add_option("--threads", rc.threads, "worker threads (same result for any count)");
    cmd->add_option("--train-fraction", rc.train_fraction, "per-class training fraction in (0,1)");
}

// command payloads ----------------------------------------------------------

int cmd_synth(std::size_t classes, const std::string& size, std::size_t bands, std::uint64_t seed,
              double separation, const std::string& cube_path, const std::string& labels_path) {
    const auto x = size.find('x');
    if (x == std::string::npos)
        throw argument_error("--size must look like 32x32, got \"" + size + "\"");
    const std::size_t m = std::stoul(size.substr(0, x));
    const std::size_t n = std::stoul(size.substr(x + 1));

    HsiCube cube = synth_cube(classes, m, n, bands, seed, separation);
    save_cube(cube, cube_path, labels_path);

    std::vector<std::size_t> pop(classes + 1, 0);
    for (std::uint16_t v : cube.labels) ++pop[v];
    std::cout << "wrote " << cube_path << " (" << m << "x" << n << "x" << bands << ") and " << labels_path
              << "\n";
    for (std::size_t k = 1; k <= classes; ++k) std::cout << "class " << k << ": " << pop[k] << " pixels\n";
    return 0;
}

ConfusionMatrix evaluate_subset(const HsiCube& cube, const BiClstmModel& model,
                                const std::vector<PixelIndex>& pixels, std::size_t threads) {
    std::vector<std::uint16_t> pred(pixels.size());
    parallel_for(pixels.size(), threads, [&](std::size_t k) {
        const PatchSequence patch =
            extract_patch(cube, pixels[k].first, pixels[k].second, model.config.patch, model.config.group);
        pred[k] = static_cast<std::uint16_t>(predict(patch, model).class_index + 1);
    });
    ConfusionMatrix cm(model.config.classes);
    for (std::size_t k = 0; k < pixels.size(); ++k)
        accumulate(cm, cube.label_at(pixels[k].first, pixels[k].second) - 1, pred[k] - 1);
    return cm;
}

json mean_std(const std::vector<double>& xs) {
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= static_cast<double>(xs.size());
    return json{{"mean", mean}, {"std", std::sqrt(var)}};
}

// One pipeline pass per repeat, seeds seed, seed+1, ...; the summary reports
// mean and standard deviation of the test metrics across the runs. The saved
// checkpoint comes from the last run.
int cmd_train(const RunConfig& rc, const std::string& cube_path, const std::string& labels_path,
              const std::string& checkpoint_path, const std::string& report_path, std::size_t repeats) {
    if (repeats == 0) throw argument_error("--repeats must be >= 1");
    HsiCube raw = load_cube(cube_path, labels_path);
    const ModelConfig mcfg = rc.model_config(raw);

    json runs = json::array();
    std::vector<double> oas, aas, kappas;
    for (std::size_t rep = 0; rep < repeats; ++rep) {
        TrainConfig tcfg = rc.train_config();
        tcfg.seed = rc.seed + rep;

        SplitSpec spec;
        spec.fraction = rc.train_fraction;
        spec.seed = tcfg.seed;
        Split split = stratified_split(raw, spec);

        BandStats stats = compute_band_stats(raw, split.train);
        HsiCube cube = normalize(raw, stats);

        std::vector<PatchSequence> data;
        data.reserve(split.train.size());
        for (const PixelIndex& px : split.train)
            data.push_back(extract_patch(cube, px.first, px.second, mcfg.patch, mcfg.group));

        std::cerr << "run " << (rep + 1) << "/" << repeats << ": training on " << data.size()
                  << " samples (" << (tcfg.augment ? "8x augmented" : "no augmentation") << "), "
                  << tcfg.epochs << " epochs\n";
        TrainResult result = train(mcfg, data, tcfg);
        for (std::size_t e = 0; e < result.report.epochs.size(); ++e)
            std::cerr << "epoch " << (e + 1) << ": loss " << result.report.epochs[e].loss << ", train OA "
                      << result.report.epochs[e].train_oa << "\n";
        std::cerr << "wall time " << result.report.wall_seconds << " s\n";

        json run;
        run["seed"] = tcfg.seed;
        run["report"] = result.report;
        if (repeats > 1 && !split.test.empty()) {
            ConfusionMatrix cm = evaluate_subset(cube, result.model, split.test, rc.threads);
            run["test"] = {{"oa", oa(cm)}, {"aa", aa(cm)}, {"kappa", kappa(cm)}};
            oas.push_back(oa(cm));
            aas.push_back(aa(cm));
            kappas.push_back(kappa(cm));
        }
        runs.push_back(run);

        Checkpoint cp;
        cp.config["run"] = rc.to_json();
        cp.config["run"]["seed"] = tcfg.seed;
        model_to_checkpoint(result.model, cp);
        opt_state_to_checkpoint(result.opt, result.model, cp);
        stats_to_checkpoint(stats, cp);
        save_checkpoint(cp, checkpoint_path);
    }

    json report;
    report["config"] = rc.to_json();
    report["runs"] = runs;
    report["final_checkpoint"] = checkpoint_path;
    if (!oas.empty()) {
        report["summary"] = {{"oa", mean_std(oas)}, {"aa", mean_std(aas)}, {"kappa", mean_std(kappas)}};
        std::cout << "test OA " << report["summary"]["oa"]["mean"] << " +- "
                  << report["summary"]["oa"]["std"] << " over " << repeats << " runs\n";
    }
    if (!report_path.empty()) {
        std::ofstream out(report_path, std::ios::trunc);
        if (!out) throw io_error("cannot write report " + report_path);
        out << report.dump(2) << "\n";
    }
    std::cout << "checkpoint written to " << checkpoint_path << "\n";
    return 0;
}

int cmd_eval(const RunConfig& rc, bool fraction_given, const std::string& cube_path,
             const std::string& labels_path, const std::string& checkpoint_path, const std::string& out_path,
             const std::string& subset_name) {
    Checkpoint cp = load_checkpoint(checkpoint_path);
    BiClstmModel model = model_from_checkpoint(cp);
    BandStats stats = stats_from_checkpoint(cp);

    HsiCube raw = load_cube(cube_path, labels_path);
    HsiCube cube = normalize(raw, stats);

    // the split replays the training run unless flags override it
    SplitSpec spec;
    spec.fraction = rc.train_fraction;
    spec.seed = rc.seed;
    if (!fraction_given && cp.config.contains("run")) {
        spec.fraction = cp.config["run"].value("train_fraction", spec.fraction);
        spec.seed = cp.config["run"].value("seed", spec.seed);
    }

    std::vector<PixelIndex> pixels;
    if (subset_name == "all") {
        for (std::size_t i = 0; i < cube.m; ++i)
            for (std::size_t j = 0; j < cube.n; ++j)
                if (cube.label_at(i, j) > 0) pixels.push_back({i, j});
    } else {
        Split split = stratified_split(cube, spec);
        pixels = subset_name == "train" ? split.train : split.test;
    }
    if (pixels.empty()) throw argument_error("evaluation subset \"" + subset_name + "\" is empty");

    ConfusionMatrix cm = evaluate_subset(cube, model, pixels, rc.threads);

    json out;
    out["config"] = rc.to_json();
    out["subset"] = subset_name;
    out["pixels"] = pixels.size();
    out["oa"] = oa(cm);
    out["aa"] = aa(cm);
    out["kappa"] = kappa(cm);
    std::vector<double> pc = per_class(cm);
    json pcj = json::array();
    for (double v : pc) pcj.push_back(std::isnan(v) ? json(nullptr) : json(v));
    out["per_class"] = pcj;
    json rows = json::array();
    for (std::size_t t = 0; t < cm.classes; ++t) {
        json row = json::array();
        for (std::size_t p = 0; p < cm.classes; ++p) row.push_back(cm.at(t, p));
        rows.push_back(row);
    }
    out["confusion"] = rows;

    const std::string dumped = out.dump(2) + "\n";
    if (!out_path.empty()) {
        std::ofstream f(out_path, std::ios::trunc);
        if (!f) throw io_error("cannot write metrics " + out_path);
        f << dumped;
    }
    std::cout << dumped;
    return 0;
}

int cmd_predict(const RunConfig& rc, const std::string& cube_path, const std::string& labels_path,
                const std::string& checkpoint_path, const std::string& map_path,
                const std::string& raster_path, bool all_pixels) {
    Checkpoint cp = load_checkpoint(checkpoint_path);
    BiClstmModel model = model_from_checkpoint(cp);
    BandStats stats = stats_from_checkpoint(cp);
    HsiCube cube = normalize(load_cube(cube_path, labels_path), stats);

    ClassificationMap map = render_map(cube, model, all_pixels, rc.threads);
    detail::write_file(map_path, map_to_ppm(map, rc.to_json().dump()));
    if (!raster_path.empty()) save_labels(map.raster, map.m, map.n, raster_path);
    std::cout << "map written to " << map_path << "\n";
    return 0;
}

int cmd_gradcheck(const RunConfig& rc, double tolerance, double step, std::size_t batch) {
    GradcheckConfig gc;
    gc.model.patch = rc.patch;
    gc.model.bands = rc.bands == 0 ? 3 : rc.bands;
    gc.model.hidden = rc.hidden;
    gc.model.kernel = rc.kernel;
    gc.model.group = rc.group;
    gc.model.classes = rc.classes == 0 ? 2 : rc.classes;
    gc.model.feature_mode =
        rc.feature_mode == "last_state" ? FeatureMode::last_state : FeatureMode::full_sequence;
    gc.seed = rc.seed;
    gc.tolerance = tolerance;
    gc.step = step;
    gc.batch = batch;

    GradcheckReport report = gradcheck(gc);
    for (const BlockCheck& b : report.blocks)
        std::cout << (b.pass ? "PASS " : "FAIL ") << b.name << " max rel err " << b.max_rel_err << "\n";
    std::cout << (report.pass ? "gradcheck PASSED" : "gradcheck FAILED") << " in " << report.seconds
              << " s\n";
    return report.pass ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"bidirectional convolutional LSTM classifier for hyperspectral cubes"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic labeled cube");
    std::size_t s_classes = 3, s_bands = 10;
    std::string s_size = "32x32";
    std::uint64_t s_seed = 1;
    double s_separation = 10.0;
    std::string s_cube = "cube.hsc", s_labels = "cube.hsl";
    synth->add_option("--classes", s_classes, "number of classes (>= 2)");
    synth->add_option("--size", s_size, "raster size, e.g. 32x32");
    synth->add_option("--bands", s_bands, "spectral bands");
    synth->add_option("--seed", s_seed, "generator seed");
    synth->add_option("--separation", s_separation, "signature spread / noise std");
    synth->add_option("--out", s_cube, "output cube path (HSC1)");
    synth->add_option("--labels", s_labels, "output label path (HSL1)");

    // shared run config
    RunConfig rc;
    std::string config_path;

    auto* tr = app.add_subcommand("train", "train on a labeled cube");
    std::string t_cube, t_labels, t_checkpoint = "model.bck", t_report;
    std::size_t t_repeats = 1;
    add_run_options(tr, rc, config_path);
    tr->add_option("--cube", t_cube, "input cube (HSC1)")->required();
    tr->add_option("--labels", t_labels, "input labels (HSL1)")->required();
    tr->add_option("--checkpoint", t_checkpoint, "output checkpoint path");
    tr->add_option("--report", t_report, "output report JSON path");
    tr->add_option("--repeats", t_repeats,
                   "train/eval runs with seeds seed, seed+1, ...; the report then carries mean +- std");

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string e_cube, e_labels, e_checkpoint, e_out, e_subset = "test";
    add_run_options(ev, rc, config_path);
    ev->add_option("--cube", e_cube, "input cube (HSC1)")->required();
    ev->add_option("--labels", e_labels, "input labels (HSL1)")->required();
    ev->add_option("--checkpoint", e_checkpoint, "checkpoint to evaluate")->required();
    ev->add_option("--out", e_out, "metrics JSON output path");
    ev->add_option("--subset", e_subset, "train, test, or all")
        ->check(CLI::IsMember({"train", "test", "all"}));

    auto* pr = app.add_subcommand("predict", "render a classification map");
    std::string p_cube, p_labels, p_checkpoint, p_map = "map.ppm", p_raster;
    bool p_all = false;
    add_run_options(pr, rc, config_path);
    pr->add_option("--cube", p_cube, "input cube (HSC1)")->required();
    pr->add_option("--labels", p_labels, "input labels (HSL1)")->required();
    pr->add_option("--checkpoint", p_checkpoint, "checkpoint to apply")->required();
    pr->add_option("--map", p_map, "output pixmap path (PPM)");
    pr->add_option("--raster", p_raster, "optional predicted-label raster (HSL1)");
    pr->add_flag("--all", p_all, "predict unlabeled pixels too");

    auto* gcd = app.add_subcommand("gradcheck", "finite-difference check of all gradients");
    double g_tolerance = 1e-5, g_step = 1e-6;
    std::size_t g_batch = 2;
    add_run_options(gcd, rc, config_path);
    gcd->add_option("--tolerance", g_tolerance, "max relative error");
    gcd->add_option("--step", g_step, "finite difference step");
    gcd->add_option("--gc-batch", g_batch, "samples in the checked batch");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        CLI::App* active = app.get_subcommands().front();
        if (!config_path.empty()) merge_config_file(config_path, rc, *active);

        if (active == synth)
            return cmd_synth(s_classes, s_size, s_bands, s_seed, s_separation, s_cube, s_labels);
        if (active == tr) return cmd_train(rc, t_cube, t_labels, t_checkpoint, t_report, t_repeats);
        if (active == ev)
            return cmd_eval(rc, ev->get_option("--train-fraction")->count() > 0 ||
                                    ev->get_option("--seed")->count() > 0,
                            e_cube, e_labels, e_checkpoint, e_out, e_subset);
        if (active == pr) return cmd_predict(rc, p_cube, p_labels, p_checkpoint, p_map, p_raster, p_all);
        if (active == gcd) return cmd_gradcheck(rc, g_tolerance, g_step, g_batch);
        return 2;
    } catch (const argument_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
