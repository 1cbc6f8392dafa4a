#include "seednorm/cli.hpp"

#include <charconv>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "seednorm/checkpoint.hpp"
#include "seednorm/gradcheck.hpp"
#include "seednorm/probes.hpp"

namespace seednorm {

namespace {

using ojson = nlohmann::ordered_json;

class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

std::string fmt(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char ch : s) {
        if (ch == '"') q += '"';
        q += ch;
    }
    return q + "\"";
}

class CsvWriter {
public:
    explicit CsvWriter(std::ostream& os) : os_(os) {}

    void row(const std::vector<std::string>& fields) {
        for (std::size_t i = 0; i < fields.size(); ++i) {
            if (i) os_ << ',';
            os_ << csv_field(fields[i]);
        }
        os_ << "\r\n";
    }

private:
    std::ostream& os_;
};

// ---- gradcheck -------------------------------------------------------------

int cmd_gradcheck(const RunConfig& cfg, std::ostream& out) {
    const GradcheckArgs& a = cfg.gradcheck;
    GradcheckOptions opts;
    for (const auto& name : a.variants) {
        const NormKind k = parse_norm_kind(name);
        if (k == NormKind::mh_seednorm) {
            for (std::size_t h : a.heads) opts.variants.push_back({k, h});
        } else {
            opts.variants.push_back({k, 1});
        }
    }
    opts.dims = a.dims;
    opts.trials = a.trials;
    opts.seed = cfg.seed;
    opts.tolerance = a.tolerance;
    opts.step = a.step;
    const GradcheckReport rep = run_gradcheck(opts);

    if (cfg.format == OutputFormat::csv) {
        CsvWriter w(out);
        w.row({"variant", "trials", "max_rel_error", "pass"});
        for (const auto& r : rep.results) {
            w.row({r.variant.label(), std::to_string(r.trials), fmt(r.max_rel_error),
                   r.pass ? "true" : "false"});
        }
    } else {
        ojson j;
        j["command"] = "gradcheck";
        j["seed"] = cfg.seed;
        j["tolerance"] = rep.tolerance;
        j["trials"] = a.trials;
        j["dims"] = a.dims;
        j["pass"] = rep.pass;
        j["results"] = ojson::array();
        for (const auto& r : rep.results) {
            ojson e;
            e["variant"] = r.variant.label();
            e["trials"] = r.trials;
            e["max_rel_error"] = r.max_rel_error;
            e["slots"] = {{"gamma", r.slots.d_gamma},
                          {"alpha", r.slots.d_alpha},
                          {"beta", r.slots.d_beta},
                          {"shift", r.slots.d_shift},
                          {"x", r.slots.d_x}};
            e["worst"] = r.worst;
            if (r.orthogonality) e["dx_orthogonality"] = *r.orthogonality;
            e["pass"] = r.pass;
            j["results"].push_back(std::move(e));
        }
        out << j.dump(2) << '\n';
    }
    return rep.pass ? kExitPass : kExitCheckFailed;
}

// ---- probe -----------------------------------------------------------------

ComponentDistribution parse_distribution(const std::string& s) {
    if (s == "normal") return ComponentDistribution::normal;
    if (s == "uniform") return ComponentDistribution::uniform;
    throw UsageError("unknown distribution: " + s);
}

std::vector<ProbeReport> run_probes(const RunConfig& cfg) {
    const ProbeArgs& a = cfg.probe;
    if (a.names.empty()) throw UsageError("probe: give at least one --name");
    std::vector<ProbeReport> reports;
    std::uint64_t index = 0;
    auto next_rng = [&] { return Rng(Rng::at(cfg.seed, index++)); };
    for (const auto& name : a.names) {
        if (name == "scale_insensitivity") {
            for (std::size_t d : a.dims) {
                for (std::size_t h : a.heads) {
                    Rng rng = next_rng();
                    NormParams p = NormParams::dynamic(d, 1.0, h);
                    p.gamma = rng.normal_vector(d);
                    p.alpha = rng.normal_vector(d);
                    p.beta = a.beta_zero ? Vector(d, 0.0) : rng.normal_vector(d);
                    reports.push_back(probe_scale_insensitivity(p, a.k_values, rng, a.trials));
                }
            }
        } else if (name == "dyt_rmsnorm_ode") {
            if (a.grid_points < 2) throw UsageError("probe: --grid-points must be >= 2");
            std::vector<double> grid(a.grid_points);
            for (std::size_t i = 0; i < grid.size(); ++i) {
                grid[i] = -a.grid_range + 2.0 * a.grid_range * static_cast<double>(i) /
                                              static_cast<double>(grid.size() - 1);
            }
            for (std::size_t d : a.dims) {
                reports.push_back(probe_dyt_rmsnorm_ode(a.c, d, grid, next_rng().next_u64()));
            }
        } else if (name == "dot_variance") {
            const auto dist = parse_distribution(a.distribution);
            for (std::size_t d : a.dims) {
                for (std::size_t h : a.heads) {
                    Rng rng = next_rng();
                    reports.push_back(probe_dot_variance(d, h, a.sigma, a.samples, rng, dist));
                }
            }
        } else if (name == "cost") {
            for (std::size_t d : a.dims) reports.push_back(probe_cost(a.layers, d, a.attn_heads));
        } else {
            throw UsageError("unknown probe: " + name);
        }
    }
    return reports;
}

int cmd_probe(const RunConfig& cfg, std::ostream& out) {
    const auto reports = run_probes(cfg);
    bool pass = true;
    for (const auto& r : reports) pass = pass && r.pass;
    if (cfg.format == OutputFormat::csv) {
        CsvWriter w(out);
        w.row({"name", "samples", "statistic", "expected", "tolerance", "pass"});
        for (const auto& r : reports) {
            w.row({r.name, std::to_string(r.samples), fmt(r.statistic), fmt(r.expected),
                   fmt(r.tolerance), r.pass ? "true" : "false"});
        }
    } else {
        out << nlohmann::json(reports).dump(2) << '\n';
    }
    return pass ? kExitPass : kExitCheckFailed;
}

// ---- train / compare -------------------------------------------------------

TrainConfig effective_train(const TrainArgs& a) {
    TrainConfig t = a.train;
    if (a.no_dynamic_decay) {
        t.decay.alpha = false;
        t.decay.beta = false;
    }
    return t;
}

ModelConfig model_for(const TrainArgs& a, const std::string& variant) {
    ModelConfig m = a.model;
    m.norm = parse_norm_kind(variant);
    return m;
}

struct RunOutcome {
    LossCurve curve;
    ModelConfig model;
    std::optional<TrainingAborted> aborted;
};

RunOutcome run_training(const RunConfig& cfg, const std::string& variant) {
    const TrainArgs& a = cfg.train;
    const TrainConfig t = effective_train(a);
    const BatchSource source(a.task);
    TrainSession s;
    if (!a.resume.empty()) {
        s = load_checkpoint(a.resume);
    } else {
        Rng rng(cfg.seed);
        s = start_session(model_for(a, variant), t, rng);
    }
    RunOutcome o;
    try {
        train_steps(s, t, source, t.steps);
    } catch (const TrainingAborted& e) {
        o.aborted = e;
    }
    if (!a.save_checkpoint.empty() && !o.aborted) save_checkpoint(s, a.save_checkpoint);
    o.model = s.model.cfg;
    o.curve = o.aborted ? o.aborted->partial() : std::move(s.curve);
    return o;
}

ojson task_json(const TaskSpec& t) {
    ojson j{{"kind", std::string(to_string(t.kind))},
            {"batch", t.batch},
            {"length", t.length},
            {"vocab", t.vocab}};
    if (t.kind == TaskKind::text) j["text_path"] = t.text_path;
    return j;
}

ojson train_json(const TrainConfig& t) {
    return {{"steps", t.steps},
            {"lr", t.adam.lr},
            {"beta1", t.adam.beta1},
            {"beta2", t.adam.beta2},
            {"adam_eps", t.adam.eps},
            {"weight_decay", t.adam.weight_decay},
            {"decay_alpha", t.decay.alpha},
            {"decay_beta", t.decay.beta},
            {"warmup", t.warmup},
            {"grad_clip", t.grad_clip},
            {"ema", t.ema},
            {"freeze_beta", t.freeze_beta},
            {"replay_batch", t.replay_batch}};
}

ojson abort_json(const std::optional<TrainingAborted>& a) {
    if (!a) return nullptr;
    return {{"step", a->step()}, {"stage", a->stage()}};
}

int cmd_train(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    const TrainArgs& a = cfg.train;
    const TrainConfig t = effective_train(a);
    const RunOutcome o = run_training(cfg, a.variant);
    const auto ema = ema_series(o.curve, t.ema);

    if (cfg.format == OutputFormat::csv) {
        CsvWriter w(out);
        std::vector<std::string> header{"step", "loss", "grad_norm", "ema"};
        if (a.wall_time) header.push_back("wall_time");
        w.row(header);
        for (std::size_t i = 0; i < o.curve.size(); ++i) {
            const auto& r = o.curve.records[i];
            std::vector<std::string> row{std::to_string(r.step), fmt(r.loss), fmt(r.grad_norm),
                                         fmt(ema[i])};
            if (a.wall_time) row.push_back(fmt(r.wall_time));
            w.row(row);
        }
    } else {
        ojson j;
        j["command"] = "train";
        j["seed"] = cfg.seed;
        j["model_config"] = model_config_to_json(o.model);
        j["task"] = task_json(a.task);
        j["train"] = train_json(t);
        j["records"] = ojson::array();
        for (std::size_t i = 0; i < o.curve.size(); ++i) {
            const auto& r = o.curve.records[i];
            ojson e{{"step", r.step}, {"loss", r.loss}, {"grad_norm", r.grad_norm}, {"ema", ema[i]}};
            if (a.wall_time) e["wall_time"] = r.wall_time;
            j["records"].push_back(std::move(e));
        }
        j["final_ema"] = ema.empty() ? ojson(nullptr) : ojson(ema.back());
        j["aborted"] = abort_json(o.aborted);
        out << j.dump(2) << '\n';
    }
    if (o.aborted) {
        err << "error: " << o.aborted->what() << '\n';
        return kExitCheckFailed;
    }
    return kExitPass;
}

int cmd_compare(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    const TrainArgs& a = cfg.train;
    if (a.variant_a.empty() || a.variant_b.empty()) {
        throw UsageError("compare: --variant-a and --variant-b are required");
    }
    if (!a.resume.empty() || !a.save_checkpoint.empty()) {
        throw UsageError("compare: checkpoints are not supported");
    }
    const TrainConfig t = effective_train(a);
    const RunOutcome ra = run_training(cfg, a.variant_a);
    const RunOutcome rb = run_training(cfg, a.variant_b);
    const auto ema_a = ema_series(ra.curve, t.ema);
    const auto ema_b = ema_series(rb.curve, t.ema);
    const std::size_t rows = std::min(ra.curve.size(), rb.curve.size());

    if (cfg.format == OutputFormat::csv) {
        CsvWriter w(out);
        w.row({"step", "loss_a", "loss_b", "ema_a", "ema_b"});
        for (std::size_t i = 0; i < rows; ++i) {
            w.row({std::to_string(ra.curve.records[i].step), fmt(ra.curve.records[i].loss),
                   fmt(rb.curve.records[i].loss), fmt(ema_a[i]), fmt(ema_b[i])});
        }
    } else {
        ojson j;
        j["command"] = "compare";
        j["seed"] = cfg.seed;
        j["variant_a"] = a.variant_a;
        j["variant_b"] = a.variant_b;
        j["task"] = task_json(a.task);
        j["train"] = train_json(t);
        j["rows"] = ojson::array();
        for (std::size_t i = 0; i < rows; ++i) {
            j["rows"].push_back({{"step", ra.curve.records[i].step},
                                 {"loss_a", ra.curve.records[i].loss},
                                 {"loss_b", rb.curve.records[i].loss},
                                 {"ema_a", ema_a[i]},
                                 {"ema_b", ema_b[i]}});
        }
        j["final_ema_a"] = ema_a.empty() ? ojson(nullptr) : ojson(ema_a.back());
        j["final_ema_b"] = ema_b.empty() ? ojson(nullptr) : ojson(ema_b.back());
        j["aborted_a"] = abort_json(ra.aborted);
        j["aborted_b"] = abort_json(rb.aborted);
        out << j.dump(2) << '\n';
    }
    for (const auto* o : {&ra, &rb}) {
        if (o->aborted) err << "error: " << o->aborted->what() << '\n';
    }
    return ra.aborted || rb.aborted ? kExitCheckFailed : kExitPass;
}

// ---- cost --------------------------------------------------------------------

int cmd_cost(const RunConfig& cfg, std::ostream& out) {
    const CostArgs& a = cfg.cost;
    const CostEstimate est = estimate_cost(a.layers, a.hidden, a.heads);
    std::optional<ProbeReport> check;
    if (a.enumerate) check = probe_cost(a.layers, a.hidden, a.heads);

    if (cfg.format == OutputFormat::csv) {
        CsvWriter w(out);
        std::vector<std::string> header{"layers", "hidden", "heads", "extra_params", "extra_madds"};
        std::vector<std::string> row{std::to_string(est.layers), std::to_string(est.hidden),
                                     std::to_string(est.heads), std::to_string(est.extra_params),
                                     std::to_string(est.extra_madds)};
        if (check) {
            header.push_back("enumerated_delta");
            row.push_back(check->details[0]["enumerated_delta"].dump());
        }
        w.row(header);
        w.row(row);
    } else {
        ojson j;
        j["command"] = "cost";
        j["layers"] = est.layers;
        j["hidden"] = est.hidden;
        j["heads"] = est.heads;
        j["extra_params"] = est.extra_params;
        j["extra_madds"] = est.extra_madds;
        if (check) {
            j["enumerated_delta"] = check->details[0]["enumerated_delta"];
            j["pass"] = check->pass;
        }
        out << j.dump(2) << '\n';
    }
    return !check || check->pass ? kExitPass : kExitCheckFailed;
}

// ---- parsing -------------------------------------------------------------------

void add_common(CLI::App* sub, RunConfig& cfg) {
    sub->add_option("--seed", cfg.seed, "Master seed")->envname("SEEDNORM_SEED");
    sub->add_option("--output,-o", cfg.output, "Write the report here instead of stdout");
    sub->add_option("--format", cfg.format, "Report format")
        ->transform(CLI::CheckedTransformer(
            std::map<std::string, OutputFormat>{{"json", OutputFormat::json},
                                                {"csv", OutputFormat::csv}}));
}

void add_training(CLI::App* sub, TrainArgs& a) {
    ModelConfig& m = a.model;
    sub->add_option("--layers", m.layers, "Transformer blocks");
    sub->add_option("--hidden", m.hidden, "Model width D");
    sub->add_option("--attn-heads", m.attn_heads, "Attention heads");
    sub->add_option("--norm-heads", m.norm_heads, "Heads of mh_seednorm slots");
    sub->add_option("--vocab", m.vocab, "Model vocabulary");
    sub->add_option("--context", m.context, "Model context length");
    sub->add_option("--ffn-hidden", m.ffn_hidden, "FFN width (0 = 4 * hidden)");
    sub->add_option("--alpha-init", m.alpha_init, "Initial alpha of dynamic norms");
    sub->add_option("--dyt-alpha-init", m.dyt_alpha_init, "Initial DyT scalar");
    sub->add_option("--eps", m.eps, "Norm epsilon");
    sub->add_flag("!--qk-full-width", m.qk_norm_per_head,
                  "Apply Q/K norms across the full width instead of per head");

    TaskSpec& t = a.task;
    sub->add_option_function<std::string>(
           "--task", [&t](const std::string& s) { t.kind = parse_task_kind(s); }, "copy or text")
        ->check(CLI::IsMember({"copy", "text"}));
    sub->add_option("--text-path", t.text_path, "Byte-level corpus for --task text");
    sub->add_option("--batch", t.batch, "Sequences per batch");
    sub->add_option("--length", t.length, "Tokens per sequence");
    sub->add_option("--task-vocab", t.vocab, "Copy-task vocabulary (separator included)");

    TrainConfig& tr = a.train;
    sub->add_option("--steps", tr.steps, "Optimizer steps");
    sub->add_option("--lr", tr.adam.lr, "Peak learning rate");
    sub->add_option("--beta1", tr.adam.beta1, "AdamW beta1");
    sub->add_option("--beta2", tr.adam.beta2, "AdamW beta2");
    sub->add_option("--weight-decay", tr.adam.weight_decay, "Decoupled weight decay");
    sub->add_option("--warmup", tr.warmup, "Linear warmup steps");
    sub->add_option("--clip", tr.grad_clip, "Global grad-norm clip (<= 0 disables)");
    sub->add_option("--ema", tr.ema, "EMA coefficient for smoothed losses");
    sub->add_flag("--no-dynamic-decay", a.no_dynamic_decay, "No weight decay on alpha and beta");
    sub->add_flag("--freeze-beta", tr.freeze_beta, "Keep beta at its initial value");
    sub->add_flag("--replay-batch", tr.replay_batch, "Reuse the first batch at every step");
    sub->add_flag("--wall-time", a.wall_time, "Report wall-clock seconds");
}

}  // namespace

int run_command(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    try {
        std::ofstream file;
        std::ostringstream buffer;
        std::ostream& dest = cfg.output.empty() ? out : static_cast<std::ostream&>(buffer);
        int code = kExitUsage;
        if (cfg.command == "gradcheck") code = cmd_gradcheck(cfg, dest);
        else if (cfg.command == "probe") code = cmd_probe(cfg, dest);
        else if (cfg.command == "train") code = cmd_train(cfg, dest, err);
        else if (cfg.command == "compare") code = cmd_compare(cfg, dest, err);
        else if (cfg.command == "cost") code = cmd_cost(cfg, dest);
        else throw UsageError("unknown command: " + cfg.command);
        if (!cfg.output.empty()) {
            file.open(cfg.output, std::ios::binary);
            if (!file) throw UsageError("cannot write " + cfg.output);
            file << buffer.str();
        }
        return code;
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::runtime_error& e) {
        err << "error: " << e.what() << '\n';
        return kExitCheckFailed;
    }
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    RunConfig cfg;
    CLI::App app("Self-rescaled dynamic normalization: gradient checks, probes and training runs",
                 "seednorm");
    app.set_config("--config", "", "Key-value config file; keys are <command>.<option>");
    app.allow_config_extras(false);
    app.require_subcommand(1, 1);

    auto* gc = app.add_subcommand("gradcheck", "Analytic vs finite-difference norm gradients");
    add_common(gc, cfg);
    GradcheckArgs& g = cfg.gradcheck;
    gc->add_option("--variant", g.variants, "Norms to check")->delimiter(',');
    gc->add_option("--heads", g.heads, "Head counts for mh_seednorm")->delimiter(',');
    gc->add_option("--dims", g.dims, "Widths D cycled over trials")->delimiter(',');
    gc->add_option("--trials", g.trials, "Random configurations per variant");
    gc->add_option("--tol", g.tolerance, "Maximum relative error");
    gc->add_option("--step", g.step, "Central-difference step");

    auto* pr = app.add_subcommand("probe", "Executable checks of the analytical properties");
    add_common(pr, cfg);
    ProbeArgs& p = cfg.probe;
    pr->add_option("--name", p.names,
                   "scale_insensitivity, dyt_rmsnorm_ode, dot_variance or cost")
        ->delimiter(',');
    pr->add_option("--dims", p.dims, "Widths D")->delimiter(',');
    pr->add_option("--heads", p.heads, "Norm heads / dot-product split")->delimiter(',');
    pr->add_option("--samples", p.samples, "Monte-Carlo samples");
    pr->add_option("--sigma", p.sigma, "Component standard deviation");
    pr->add_option("--distribution", p.distribution, "normal or uniform");
    pr->add_option("--c", p.c, "Assumed constant RMS");
    pr->add_option("--grid-points", p.grid_points, "ODE grid size");
    pr->add_option("--grid-range", p.grid_range, "ODE grid covers [-range, range]");
    pr->add_option("--k", p.k_values, "Input scale factors")->delimiter(',');
    pr->add_option("--trials", p.trials, "Rows per scale factor");
    pr->add_flag("--beta-zero", p.beta_zero, "Use beta = 0 in scale_insensitivity");
    pr->add_option("--layers", p.layers, "Layers for the cost probe");
    pr->add_option("--attn-heads", p.attn_heads, "Attention heads for the cost probe");

    auto* tr = app.add_subcommand("train", "Train the toy transformer and report the loss curve");
    add_common(tr, cfg);
    add_training(tr, cfg.train);
    tr->add_option("--variant", cfg.train.variant, "Norm variant");
    tr->add_option("--save-checkpoint", cfg.train.save_checkpoint, "Write a checkpoint at the end");
    tr->add_option("--resume", cfg.train.resume, "Continue from a checkpoint");

    auto* cp = app.add_subcommand("compare", "Train two variants on identical seeds and data");
    add_common(cp, cfg);
    add_training(cp, cfg.train);
    cp->add_option("--variant-a", cfg.train.variant_a, "First norm variant")->required();
    cp->add_option("--variant-b", cfg.train.variant_b, "Second norm variant")->required();

    auto* co = app.add_subcommand("cost", "Extra parameters and multiply-adds of the dynamic norm");
    add_common(co, cfg);
    co->add_option("--layers", cfg.cost.layers, "Layers N");
    co->add_option("--hidden", cfg.cost.hidden, "Width D");
    co->add_option("--heads", cfg.cost.heads, "Attention heads H");
    co->add_flag("--enumerate", cfg.cost.enumerate, "Cross-check against built models");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return kExitUsage;
    }
    cfg.command = app.get_subcommands().front()->get_name();
    return run_command(cfg, out, err);
}

}  // namespace seednorm
