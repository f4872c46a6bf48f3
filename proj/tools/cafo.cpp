// cafo command line front end.

#include "cafo/encode.hpp"
#include "cafo/error.hpp"
#include "cafo/harness.hpp"
#include "cafo/kernels.hpp"
#include "cafo/report.hpp"
#include "cafo/synthgen.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace cafo;

namespace {

enum Exit { ok = 0, usage = 1, data = 2, runtime = 3 };

// Train-config flags. Only flags actually given override the file.
struct TrainFlags {
    std::string config;
    std::optional<std::size_t> epochs, batch_size, rp_tau, rp_m, gamma, folds, jobs, hidden;
    std::optional<double> lr, weight_decay, lambda, rp_eps_frac;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> encoder;
    std::optional<int> threads;

    void add(CLI::App* app)
    {
        app->add_option("--config", config, "JSON config file (flat keys)")->check(CLI::ExistingFile);
        app->add_option("--epochs", epochs);
        app->add_option("--batch-size", batch_size);
        app->add_option("--lr", lr);
        app->add_option("--weight-decay", weight_decay);
        app->add_option("--lambda", lambda, "QR-Ortho weight");
        app->add_option("--seed", seed);
        app->add_option("--encoder", encoder)->check(CLI::IsMember({"rp", "gaf"}));
        app->add_option("--rp-tau", rp_tau);
        app->add_option("--rp-m", rp_m);
        app->add_option("--rp-eps-frac", rp_eps_frac);
        app->add_option("--gamma", gamma, "DepCA filters per feature");
        app->add_option("--hidden", hidden, "hidden dense width (0 = none)");
        app->add_option("--folds", folds);
        app->add_option("--jobs", jobs, "independent runs at once");
        app->add_option("--threads", threads, "OpenMP threads for kernels");
    }

    TrainConfig resolve(TrainConfig cfg = {}) const
    {
        if (!config.empty()) {
            std::ifstream in(config);
            json j;
            try {
                j = json::parse(in);
            } catch (const json::exception& e) {
                throw ShapeError("config file " + config + ": " + e.what());
            }
            apply_json(cfg, j);
        }
        if (epochs) cfg.epochs = *epochs;
        if (batch_size) cfg.batch_size = *batch_size;
        if (lr) cfg.optimizer.lr = *lr;
        if (weight_decay) cfg.optimizer.weight_decay = *weight_decay;
        if (lambda) cfg.lambda = *lambda;
        if (seed) cfg.seed = *seed;
        if (encoder) cfg.encoder.kind = parse_encoder(*encoder);
        if (rp_tau) cfg.encoder.rp.tau = *rp_tau;
        if (rp_m) cfg.encoder.rp.m = *rp_m;
        if (rp_eps_frac) cfg.encoder.rp.epsilon_fraction = *rp_eps_frac;
        if (gamma) cfg.depca.gamma = *gamma;
        if (hidden) cfg.backbone.hidden = *hidden;
        if (folds) cfg.folds = *folds;
        if (jobs) cfg.jobs = *jobs;
        if (threads) cfg.threads = *threads;
        cfg.validate();
        if (cfg.threads > 0) kernels::set_threads(cfg.threads);
        return cfg;
    }
};

std::vector<double> parse_list(const std::string& s)
{
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(std::stod(item));
    return out;
}

void print_json(const json& j) { std::cout << j.dump(1) << std::endl; }

json cv_summary(const std::vector<RunRecord>& runs, const std::optional<GroundTruthMask>& gt)
{
    json folds = json::array();
    std::vector<std::vector<double>> positions;
    double f1 = 0, acc = 0;
    for (const auto& r : runs) {
        const FoldScore sc = score_run(r, gt);
        json f = {{"fold", r.fold}, {"test_acc", sc.test_acc}, {"mean_abs_r", sc.mean_abs_r},
                  {"calinski_harabasz", sc.calinski_harabasz}};
        if (gt) {
            f["f1"] = sc.agreement.best().f1;
            f["gt_variant"] = std::string(1, sc.agreement.selected);
            f1 += sc.agreement.best().f1;
        }
        acc += sc.test_acc;
        positions.push_back(positions_from_order(r.gi().rank_desc));
        folds.push_back(f);
    }
    json s = {{"folds", folds}, {"mean_test_acc", acc / double(runs.size())}};
    if (gt) s["mean_f1"] = f1 / double(runs.size());
    if (runs.size() >= 2) {
        const auto rc = rank_correlations(positions);
        s["spearman"] = rc.spearman;
        s["kendall"] = rc.kendall;
    }
    return s;
}

void write_file(const fs::path& p, const std::string& text)
{
    std::ofstream out(p);
    if (!out) throw DataError("cannot write " + p.string());
    out << text;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"cafo: feature-centric explanations for multivariate time-series classifiers"};
    app.require_subcommand(1);

    // generate
    auto* gen = app.add_subcommand("generate", "generate a synthetic dataset");
    auto* sg = gen->add_subcommand("squidgame", "three-class shape benchmark");
    gen->require_subcommand(1);
    SquidGameConfig sgc;
    std::string gen_out;
    sg->add_option("--n-per-class", sgc.n_per_class)->check(CLI::PositiveNumber);
    sg->add_option("--seed", sgc.seed);
    sg->add_option("--t", sgc.t);
    sg->add_option("--d", sgc.d);
    sg->add_option("--noise", sgc.noise_sigma, "noise standard deviation");
    sg->add_option("--amplitude", sgc.amplitude);
    sg->add_option("--freq-lo", sgc.freq_lo);
    sg->add_option("--freq-hi", sgc.freq_hi);
    sg->add_option("--folds", sgc.folds);
    sg->add_option("--test-fraction", sgc.test_fraction);
    sg->add_option("--out", gen_out)->required();

    // inject-pseudo
    auto* inj = app.add_subcommand("inject-pseudo", "append pseudo distractor features");
    std::string inj_data, inj_out, inj_kinds = "wn,sin,gp";
    std::uint64_t inj_seed = 42;
    inj->add_option("--data", inj_data)->required();
    inj->add_option("--kinds", inj_kinds);
    inj->add_option("--seed", inj_seed);
    inj->add_option("--out", inj_out)->required();

    // encode
    auto* enc = app.add_subcommand("encode", "precompute the encoding cache");
    std::string enc_data, enc_kind = "rp", enc_cache;
    RpConfig enc_rp;
    enc->add_option("--data", enc_data)->required();
    enc->add_option("--encoder", enc_kind)->check(CLI::IsMember({"rp", "gaf"}));
    enc->add_option("--rp-tau", enc_rp.tau);
    enc->add_option("--rp-m", enc_rp.m);
    enc->add_option("--rp-eps-frac", enc_rp.epsilon_fraction);
    enc->add_option("--cache-dir", enc_cache, "defaults to $CAFO_CACHE_DIR");

    // train / cv / roar / pseudo / sweep
    std::string data_path, out_dir;
    auto add_common = [&](CLI::App* c, TrainFlags& f) {
        c->add_option("--data", data_path, "dataset directory or CSV")->required();
        c->add_option("--out", out_dir)->required();
        f.add(c);
    };
    TrainFlags train_f, cv_f, roar_f, pseudo_f, sweep_f;
    auto* tr = app.add_subcommand("train", "train a single fold");
    add_common(tr, train_f);
    int train_fold = 0;
    tr->add_option("--fold", train_fold, "validation fold");

    auto* cv = app.add_subcommand("cv", "k-fold cross-validation");
    add_common(cv, cv_f);

    auto* ro = app.add_subcommand("roar", "remove and retrain");
    add_common(ro, roar_f);
    std::string gi_from, gi_rank_list;
    ro->add_option("--gi-from", gi_from, "cv output directory whose GI ranks features");
    ro->add_option("--gi-rank", gi_rank_list, "explicit comma-separated feature order");

    auto* ps = app.add_subcommand("pseudo", "pseudo-signal GI tracking");
    add_common(ps, pseudo_f);
    std::string ps_kinds = "wn,sin,gp";
    double ps_fraction = 0.2;
    ps->add_option("--kinds", ps_kinds);
    ps->add_option("--bottom-fraction", ps_fraction);

    auto* sw = app.add_subcommand("sweep", "lambda grid");
    add_common(sw, sweep_f);
    std::string sw_lambdas = "0,0.1,0.2,0.5,1.0";
    sw->add_option("--lambdas", sw_lambdas);

    // report
    auto* rep = app.add_subcommand("report", "tables and plots from run directories");
    std::vector<std::string> rep_dirs;
    std::string rep_out, rep_gt;
    rep->add_option("dirs", rep_dirs, "run, cv or roar directories")->required();
    rep->add_option("--out", rep_out)->required();
    rep->add_option("--gt", rep_gt, "ground_truth.json (or a dataset dir holding one)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? Exit::ok : Exit::usage;
    }

    try {
        auto load = [&]() {
            MtsDataset ds = load_dataset(data_path);
            std::cerr << "dataset " << data_path << ": N=" << ds.size() << " T=" << ds.t << " D=" << ds.d
                      << " C=" << ds.c << "\n";
            return ds;
        };
        auto truth_for = [&](const MtsDataset& ds) -> std::optional<GroundTruthMask> {
            auto gt = find_ground_truth(data_path);
            if (gt && (gt->d != ds.d || gt->c != ds.c)) return std::nullopt;
            return gt;
        };

        if (sg->parsed()) {
            const SquidGame g = gen_squidgame(sgc);
            write_dataset(g.data, gen_out);
            write_ground_truth(g.truth, fs::path(gen_out) / "ground_truth.json");
            print_json({{"out", gen_out}, {"n", g.data.size()}, {"t", g.data.t}, {"d", g.data.d},
                        {"c", g.data.c}, {"hash", dataset_hash(g.data)}});
        } else if (inj->parsed()) {
            data_path = inj_data;
            const MtsDataset ds = load();
            const MtsDataset aug = inject_pseudo(ds, parse_pseudo_kinds(inj_kinds), inj_seed);
            write_dataset(aug, inj_out);
            print_json({{"out", inj_out}, {"d", aug.d}, {"pseudo_columns", pseudo_columns(aug)}});
        } else if (enc->parsed()) {
            data_path = enc_data;
            const MtsDataset ds = load();
            EncoderConfig ec;
            ec.kind = parse_encoder(enc_kind);
            ec.rp = enc_rp;
            if (ec.kind == EncoderKind::rp) ec.rp.validate();
            if (enc_cache.empty()) {
                const char* env = std::getenv("CAFO_CACHE_DIR");
                if (env == nullptr || *env == '\0') throw ShapeError("encode needs --cache-dir or CAFO_CACHE_DIR");
                enc_cache = env;
            }
            fs::create_directories(enc_cache);
            const fs::path file = cache_path(enc_cache, ds, ec);
            write_encoding_cache(ds, ec, file);
            print_json({{"cache", file.string()}, {"side", ec.image_size(ds.t)}});
        } else if (tr->parsed()) {
            const TrainConfig cfg = train_f.resolve();
            const MtsDataset ds = load();
            RunRecord run = train(ds, cfg, make_fold_split(ds, train_fold, cfg.folds));
            run.fold = train_fold;
            write_run(run, cfg, out_dir, truth_for(ds));
            print_json({{"out", out_dir}, {"test_acc", run.test_acc}});
        } else if (cv->parsed()) {
            const TrainConfig cfg = cv_f.resolve();
            const MtsDataset ds = load();
            const auto gt = truth_for(ds);
            const auto runs = cross_validate(ds, cfg, fs::path(out_dir), gt);
            const json summary = cv_summary(runs, gt);
            write_file(fs::path(out_dir) / "cv_summary.json", summary.dump(1) + "\n");
            write_report(collect_report_inputs({out_dir}), gt, fs::path(out_dir) / "report");
            print_json(summary);
        } else if (ro->parsed()) {
            const TrainConfig cfg = roar_f.resolve();
            const MtsDataset ds = load();
            std::vector<std::size_t> rank;
            if (!gi_rank_list.empty()) {
                for (double v : parse_list(gi_rank_list)) rank.push_back(std::size_t(v));
            } else if (!gi_from.empty()) {
                const ReportInputs in = collect_report_inputs({gi_from});
                std::vector<RunRecord> runs;
                for (const auto& d : in.runs) runs.push_back(read_run(d));
                if (runs.empty()) throw DataError("no runs found under " + gi_from);
                rank = mean_gi_rank(runs);
            } else {
                throw ShapeError("roar needs --gi-from or --gi-rank");
            }
            const RoarResult r = roar(ds, cfg, rank, fs::path(out_dir));
            write_report(collect_report_inputs({out_dir}), std::nullopt, out_dir);
            print_json({{"abc", r.abc}, {"da", r.da}, {"wda", r.wda}, {"retrains", r.retrains}});
        } else if (ps->parsed()) {
            const TrainConfig cfg = pseudo_f.resolve();
            const MtsDataset ds = load();
            const PseudoResult r = pseudo_experiment(ds, cfg, parse_pseudo_kinds(ps_kinds), ps_fraction,
                                                     fs::path(out_dir));
            json folds = json::array();
            std::size_t hits = 0;
            for (std::size_t k = 0; k < r.runs.size(); ++k) {
                const auto gi = r.runs[k].gi();
                const auto pos = positions_from_order(gi.rank_desc);
                json ranks = json::object();
                for (std::size_t j : r.pseudo_columns) ranks[r.runs[k].feature_names[j]] = pos[j];
                folds.push_back({{"fold", k}, {"bottom", bool(r.bottom[k])}, {"pseudo_rank", ranks}});
                hits += r.bottom[k] ? 1 : 0;
            }
            const json summary = {{"pseudo_columns", r.pseudo_columns}, {"bottom_fraction", ps_fraction},
                                  {"folds", folds}, {"folds_in_bottom", hits}};
            write_file(fs::path(out_dir) / "pseudo.json", summary.dump(1) + "\n");
            write_report(collect_report_inputs({out_dir}), std::nullopt, fs::path(out_dir) / "report");
            print_json(summary);
        } else if (sw->parsed()) {
            const TrainConfig cfg = sweep_f.resolve();
            const MtsDataset ds = load();
            const auto rows = lambda_sweep(ds, cfg, parse_list(sw_lambdas), truth_for(ds), fs::path(out_dir));
            std::string csv = "lambda,acc,f1,jaccard,iacc,spearman,kendall,mean_abs_r\n";
            json j = json::array();
            for (const auto& r : rows) {
                csv += format_double(r.lambda) + "," + format_double(r.acc) + "," + format_double(r.f1) + "," +
                       format_double(r.jaccard) + "," + format_double(r.iacc) + "," + format_double(r.spearman) +
                       "," + format_double(r.kendall) + "," + format_double(r.mean_abs_r) + "\n";
                j.push_back({{"lambda", r.lambda}, {"acc", r.acc}, {"f1", r.f1}, {"jaccard", r.jaccard},
                             {"iacc", r.iacc}, {"spearman", r.spearman}, {"kendall", r.kendall},
                             {"mean_abs_r", r.mean_abs_r}});
            }
            write_file(fs::path(out_dir) / "sweep.csv", csv);
            print_json(j);
        } else if (rep->parsed()) {
            std::vector<fs::path> dirs(rep_dirs.begin(), rep_dirs.end());
            std::optional<GroundTruthMask> gt;
            if (!rep_gt.empty()) {
                const fs::path p = fs::is_directory(rep_gt) ? fs::path(rep_gt) / "ground_truth.json" : fs::path(rep_gt);
                gt = read_ground_truth(p);
            }
            const ReportInputs in = collect_report_inputs(dirs);
            const json r = write_report(in, gt, rep_out);
            print_json({{"out", rep_out}, {"abc", r["abc"]}, {"spearman", r["spearman"]}, {"f1", r["f1"]}});
        }
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return Exit::data;
    } catch (const ShapeError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return Exit::usage;
    } catch (const std::exception& e) {
        std::cerr << "failure: " << e.what() << "\n";
        return Exit::runtime;
    }
    return Exit::ok;
}
