#include "handgcn/cli.hpp"

#include "handgcn/dataset_io.hpp"
#include "handgcn/errors.hpp"
#include "handgcn/evaluation.hpp"
#include "handgcn/training.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>

namespace handgcn {

namespace {

namespace fs = std::filesystem;

struct TrainFlags {
    TrainConfig cfg;
    double val_fraction = 0.2;
};

void add_train_flags(CLI::App& cmd, TrainFlags& f, bool with_val_fraction) {
    TrainConfig& c = f.cfg;
    cmd.add_option("--seed", c.seed, "Seed for initialization, shuffling and dropout")->capture_default_str();
    cmd.add_option("--hidden", c.hidden_dim, "Hidden width H of every GCN layer")->capture_default_str()->check(CLI::PositiveNumber);
    cmd.add_option("--learning-rate", c.learning_rate, "Adam learning rate")->capture_default_str()->check(CLI::NonNegativeNumber);
    cmd.add_option("--batch-size", c.batch_size, "Mini-batch size")->capture_default_str()->check(CLI::PositiveNumber);
    cmd.add_option("--dropout-probability", c.dropout_p, "Node/edge dropout probability")->capture_default_str()->check(CLI::Range(0.0, 0.999999));
    cmd.add_option("--adam-weight-decay", c.weight_decay, "Adam weight decay")->capture_default_str()->check(CLI::NonNegativeNumber);
    cmd.add_option("--beta1", c.beta1, "Adam first-moment decay")->capture_default_str();
    cmd.add_option("--beta2", c.beta2, "Adam second-moment decay")->capture_default_str();
    cmd.add_option("--leaky-relu-alpha", c.leaky_alpha, "LeakyReLU negative slope")->capture_default_str();
    cmd.add_option("--early-stopping-patience", c.patience, "Epochs without validation improvement before stopping")->capture_default_str();
    cmd.add_option("--max-epochs", c.max_epochs, "Epoch ceiling")->capture_default_str()->check(CLI::PositiveNumber);
    cmd.add_option("--adam-epsilon", c.adam_eps, "Adam denominator epsilon")->capture_default_str();
    cmd.add_flag("--decoupled-weight-decay", c.decoupled_weight_decay, "Apply weight decay to the weights (AdamW) instead of the gradient");
    if (with_val_fraction)
        cmd.add_option("--val-fraction", f.val_fraction, "Stratified share of the data held out for early stopping (0: monitor the training set)")
            ->capture_default_str()
            ->check(CLI::Range(0.0, 0.95));
}

std::vector<PoseGraph> gather(const std::vector<PoseGraph>& all, const std::vector<std::size_t>& idx) {
    std::vector<PoseGraph> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(all[i]);
    return out;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << text;
    if (!out) throw IoError("failed writing '" + path.string() + "'");
}

/// Structured report at `path`, comma-separated table next to it.
std::pair<fs::path, fs::path> report_paths(const fs::path& path) {
    fs::path csv = path;
    csv.replace_extension(".csv");
    if (csv == path) {
        fs::path json = path;
        json.replace_extension(".json");
        return {json, csv};
    }
    return {path, csv};
}

void print_class_map(std::ostream& out) {
    const auto& vocab = ClassVocabulary::standard();
    out << "classes:";
    for (std::size_t i = 0; i < vocab.size(); ++i) out << ' ' << i << '=' << vocab.name(i);
    out << '\n';
}

void print_metrics_row(std::ostream& out, const MetricsReport& r) {
    out << std::fixed << std::setprecision(3) << "  " << std::left << std::setw(9) << r.split << std::right
        << " fold " << r.fold << "  acc " << r.accuracy << "  P " << r.precision << "  R " << r.recall << "  F1 "
        << r.f1 << "  macroAUC " << r.macro_auc << "  weightedAUC " << r.weighted_auc << '\n';
    out.unsetf(std::ios::floatfield);
}

EpochObserver epoch_printer(std::ostream& out, std::string prefix = {}) {
    return [&out, prefix](const EpochStats& s) {
        out << prefix << "epoch " << s.epoch << "  train_loss " << std::setprecision(6) << s.train_loss
            << "  val_loss " << s.val_loss << (s.improved ? "  *" : "") << std::endl;
    };
}

int cmd_synth(std::size_t classes, std::size_t per_class, double noise, std::uint64_t seed, const fs::path& out_path,
              std::ostream& out) {
    const auto poses = synth_dataset(classes, per_class, noise, seed);
    write_landmarks(out_path, poses);
    out << "wrote " << poses.size() << " poses to " << out_path.string() << '\n';
    return kExitOk;
}

int cmd_preprocess(const fs::path& input, const fs::path& output, double desired, std::ostream& out) {
    const auto poses = read_landmarks(input);
    GraphFile file;
    file.desired_distance = desired;
    file.graphs.reserve(poses.size());
    for (const auto& p : poses) file.graphs.push_back(preprocess(p, desired));
    write_graphs(output, file);
    out << "wrote " << file.graphs.size() << " graphs to " << output.string() << '\n';
    return kExitOk;
}

int cmd_train(const fs::path& data, const fs::path& ckpt_path, TrainFlags flags, std::ostream& out) {
    const GraphFile file = read_graphs(data);
    if (file.graphs.empty()) throw EmptyDataset("no graphs in '" + data.string() + "'");
    flags.cfg.desired_distance = file.desired_distance;

    std::vector<std::size_t> labels;
    for (const auto& g : file.graphs) labels.push_back(g.label);
    std::vector<PoseGraph> train_set, val_set;
    if (flags.val_fraction > 0.0) {
        const HoldoutSplit split =
            stratified_holdout(labels, flags.val_fraction, derive_seed(flags.cfg.seed, 0x76616c));
        if (split.held_out.empty())
            throw TooFewSamples("--val-fraction " + std::to_string(flags.val_fraction) +
                                " holds out no samples; use --val-fraction 0 to early-stop on the training loss");
        train_set = gather(file.graphs, split.train);
        val_set = gather(file.graphs, split.held_out);
    } else {
        // early stopping watches the training set itself
        train_set = file.graphs;
        val_set = file.graphs;
    }

    const ModelConfig mc = flags.cfg.model_config();
    const std::size_t count = parameter_count(ModelParams::zeros(mc));
    out << "parameters: " << count << " (H = " << mc.hidden_dim << "; reference architecture reports "
        << kReferenceParameterCount << ")\n";
    out << "training on " << train_set.size() << " graphs, validating on " << val_set.size() << '\n';

    const Checkpoint ckpt = fit(train_set, val_set, flags.cfg, epoch_printer(out));
    save_checkpoint(ckpt, ckpt_path);
    out << "best epoch " << ckpt.best_epoch << " of " << ckpt.history.size() << "; checkpoint written to "
        << ckpt_path.string() << '\n';
    return kExitOk;
}

int cmd_crossval(const fs::path& data, std::size_t folds, const fs::path& report, TrainFlags flags, std::ostream& out,
                 std::ostream& err) {
    const GraphFile file = read_graphs(data);
    flags.cfg.desired_distance = file.desired_distance;
    const ModelConfig mc = flags.cfg.model_config();
    out << "parameters: " << parameter_count(ModelParams::zeros(mc)) << " (H = " << mc.hidden_dim
        << "; reference architecture reports " << kReferenceParameterCount << ")\n";
    print_class_map(out);

    const CrossValidationResult res =
        cross_validate(file.graphs, flags.cfg, folds, [&out](std::size_t fold, const EpochStats& s) {
            epoch_printer(out, "fold " + std::to_string(fold) + " ")(s);
        });
    for (std::size_t c : res.rare_classes)
        err << "warning: class " << ClassVocabulary::standard().name(c) << " has fewer than " << folds
            << " samples; it is used for training in every fold\n";

    std::vector<MetricsReport> rows;
    bool failed = false;
    out << "fold results:\n";
    for (const auto& f : res.folds) {
        if (!f.error.empty()) {
            err << "fold " << f.fold << " failed: " << f.error << '\n';
            failed = true;
            continue;
        }
        rows.push_back(f.testing->report);
        rows.push_back(f.training->report);
        print_metrics_row(out, f.testing->report);
        print_metrics_row(out, f.training->report);
        out << "  fold " << f.fold << ": " << f.epochs << " epochs, best " << f.best_epoch << ", "
            << std::setprecision(3) << f.mean_epoch_seconds << " s/epoch\n";
        for (std::size_t c : f.testing->auc.skipped_classes)
            err << "warning: fold " << f.fold << " class " << ClassVocabulary::standard().name(c)
                << " skipped in AUC (no positives or negatives)\n";
    }
    const auto [json_path, csv_path] = report_paths(report);
    write_text(json_path, cross_validation_report(res, ClassVocabulary::standard().names()));
    write_text(csv_path, metrics_csv(rows));
    out << "report written to " << json_path.string() << " and " << csv_path.string() << '\n';
    if (failed) throw NumericalError("one or more folds failed");
    return kExitOk;
}

int cmd_eval(const fs::path& model, const fs::path& data, const fs::path& report, std::ostream& out) {
    const Checkpoint ckpt = load_checkpoint(model);
    const GraphFile file = read_graphs(data);
    if (file.desired_distance != ckpt.model.desired_distance)
        throw DataError("graphs were normalized to distance " + std::to_string(file.desired_distance) +
                        " but the model expects " + std::to_string(ckpt.model.desired_distance));
    const SplitEvaluation e = evaluate_split(file.graphs, ckpt.params, ckpt.model, "testing", 0);
    print_class_map(out);
    print_metrics_row(out, e.report);
    const auto [json_path, csv_path] = report_paths(report);
    write_text(json_path, evaluation_report(e, ClassVocabulary::standard().names()));
    write_text(csv_path, metrics_csv(std::span<const MetricsReport>(&e.report, 1)));
    out << "report written to " << json_path.string() << " and " << csv_path.string() << '\n';
    return kExitOk;
}

int cmd_predict(const fs::path& model, const fs::path& input, std::ostream& out) {
    const Checkpoint ckpt = load_checkpoint(model);
    const auto poses = read_landmarks(input);
    std::vector<PoseGraph> graphs;
    graphs.reserve(poses.size());
    for (const auto& p : poses) graphs.push_back(preprocess(p, ckpt.model.desired_distance));
    if (graphs.empty()) return kExitOk;
    const Matrix logp = predict_log_probs(graphs, ckpt.params, ckpt.model);
    const auto& vocab = ClassVocabulary::standard();
    for (std::size_t i = 0; i < graphs.size(); ++i) {
        const auto row = logp.row(i);
        const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
        out << graphs[i].source_id << '\t' << vocab.name(best) << '\t' << std::fixed << std::setprecision(6)
            << std::exp(row[best]) << '\n';
        out.unsetf(std::ios::floatfield);
    }
    return kExitOk;
}

} // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Hand-landmark graph preprocessing and residual GCN gesture classifier", "handgcn"};
    app.require_subcommand(1);

    std::size_t synth_classes = kNumClasses, synth_per_class = 200;
    double synth_noise = 0.02;
    std::uint64_t synth_seed = 7;
    std::string synth_out;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic landmark file");
    synth->add_option("--classes", synth_classes, "Number of classes (<= 29)")->capture_default_str()->check(CLI::Range(1, 29));
    synth->add_option("--per-class", synth_per_class, "Samples per class")->capture_default_str()->check(CLI::PositiveNumber);
    synth->add_option("--noise", synth_noise, "Gaussian jitter sigma")->capture_default_str()->check(CLI::NonNegativeNumber);
    synth->add_option("--seed", synth_seed, "Generator seed")->capture_default_str();
    synth->add_option("--out", synth_out, "Output landmark file")->required();

    std::string pre_in, pre_out;
    double pre_distance = 1.0;
    auto* pre = app.add_subcommand("preprocess", "Normalize landmark poses into graph records");
    pre->add_option("--input", pre_in, "Landmark file")->required();
    pre->add_option("--output", pre_out, "Graph file to write")->required();
    pre->add_option("--desired-distance", pre_distance, "Target maximum pairwise landmark distance")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);

    std::string train_data, train_out;
    TrainFlags train_flags;
    auto* train = app.add_subcommand("train", "Train a model with early stopping");
    train->add_option("--data", train_data, "Graph file")->required();
    train->add_option("--out", train_out, "Checkpoint to write")->required();
    add_train_flags(*train, train_flags, true);

    std::string cv_data, cv_report;
    std::size_t cv_folds = 5;
    TrainFlags cv_flags;
    auto* crossval = app.add_subcommand("crossval", "Stratified k-fold cross-validation");
    crossval->add_option("--data", cv_data, "Graph file")->required();
    crossval->add_option("--folds", cv_folds, "Number of folds")->capture_default_str()->check(CLI::Range(2, 1000));
    crossval->add_option("--report", cv_report, "Report path (a .csv table is written alongside)")->required();
    add_train_flags(*crossval, cv_flags, false);

    std::string eval_model, eval_data, eval_report;
    auto* eval = app.add_subcommand("eval", "Score a checkpoint on a graph file");
    eval->add_option("--model", eval_model, "Checkpoint")->required();
    eval->add_option("--data", eval_data, "Graph file")->required();
    eval->add_option("--report", eval_report, "Report path (a .csv table is written alongside)")->required();

    std::string pred_model, pred_input;
    auto* predict = app.add_subcommand("predict", "Classify raw landmark poses");
    predict->add_option("--model", pred_model, "Checkpoint")->required();
    predict->add_option("--input", pred_input, "Landmark file")->required();

    std::vector<std::string> argv_storage;
    argv_storage.reserve(args.size() + 1);
    argv_storage.emplace_back("handgcn");
    argv_storage.insert(argv_storage.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    for (const auto& a : argv_storage) argv.push_back(a.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        const auto subs = app.get_subcommands();
        out << (subs.empty() ? app.help() : subs.front()->help());
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        const auto subs = app.get_subcommands();
        err << "error: " << e.what() << "\n\n" << (subs.empty() ? app.help() : subs.front()->help());
        return kExitUsage;
    }

    try {
        if (*synth) return cmd_synth(synth_classes, synth_per_class, synth_noise, synth_seed, synth_out, out);
        if (*pre) return cmd_preprocess(pre_in, pre_out, pre_distance, out);
        if (*train) return cmd_train(train_data, train_out, train_flags, out);
        if (*crossval) return cmd_crossval(cv_data, cv_folds, cv_report, cv_flags, out, err);
        if (*eval) return cmd_eval(eval_model, eval_data, eval_report, out);
        if (*predict) return cmd_predict(pred_model, pred_input, out);
    } catch (const NumericalError& e) {
        err << "numerical failure: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const Error& e) {
        err << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitNumerical;
    }
    return kExitUsage;
}

} // namespace handgcn
