#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "sourcerer/harness.hpp"
#include "sourcerer/model_io.hpp"

using namespace sourcerer;

namespace {

nlohmann::ordered_json read_json_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    nlohmann::ordered_json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(path + " is not valid JSON: " + std::string(e.what()));
    }
    return j;
}

struct ArchFlags {
    int filters = 64;
    int kernel = 5;
    int fc = 256;
    float dropout = 0.5f;

    void attach(CLI::App* cmd) {
        cmd->add_option("--filters", filters, "convolutional filters per block");
        cmd->add_option("--kernel", kernel, "convolution kernel length (odd)");
        cmd->add_option("--fc", fc, "fully-connected units");
        cmd->add_option("--dropout", dropout, "dropout rate");
    }

    void apply(MethodConfig& config) const {
        config.arch.conv_filters = filters;
        config.arch.kernel_len = kernel;
        config.arch.fc_units = fc;
        config.arch.dropout_rate = dropout;
    }
};

Dataset load_normalized(const std::string& dir, const NormStats& stats) {
    return normalize(read_dataset(dir), stats);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"semi-supervised domain adaptation for multivariate time series"};
    app.require_subcommand(1);

    // gen
    std::string gen_spec, gen_out;
    auto* gen = app.add_subcommand("gen", "generate a synthetic source/target domain pair");
    gen->add_option("--spec", gen_spec, "generator spec JSON file")->required();
    gen->add_option("--out", gen_out, "output directory")->required();

    // train
    std::string train_data, train_out;
    int train_updates = 5000, train_batch = 32;
    double train_lr = 1e-3;
    std::uint64_t train_seed = 0;
    ArchFlags train_arch;
    auto* train = app.add_subcommand("train", "train a model on one labelled dataset");
    train->add_option("--data", train_data, "dataset directory")->required();
    train->add_option("--out", train_out, "checkpoint path")->required();
    train->add_option("--updates", train_updates, "gradient update budget");
    train->add_option("--batch", train_batch, "batch size");
    train->add_option("--lr", train_lr, "Adam learning rate");
    train->add_option("--seed", train_seed, "random seed");
    train_arch.attach(train);

    // adapt
    std::string adapt_model, adapt_data, adapt_method, adapt_out;
    double adapt_tmax = 1e6;
    int adapt_polygons = -1;
    int adapt_updates = 5000, adapt_batch = 32;
    double adapt_lr = 1e-3;
    std::uint64_t adapt_seed = 0;
    auto* adapt_cmd = app.add_subcommand("adapt", "adapt a source model to labelled target data");
    adapt_cmd->add_option("--model", adapt_model, "source checkpoint")->required();
    adapt_cmd->add_option("--data", adapt_data, "target training dataset directory")->required();
    adapt_cmd->add_option("--method", adapt_method, "naive | finetune | sourcerer")->required();
    adapt_cmd->add_option("--out", adapt_out, "adapted checkpoint path")->required();
    adapt_cmd->add_option("--tmax", adapt_tmax, "schedule hyperparameter t_max");
    adapt_cmd->add_option("--polygons", adapt_polygons,
                          "labelled polygons to sample (default: all)");
    adapt_cmd->add_option("--updates", adapt_updates, "gradient update budget");
    adapt_cmd->add_option("--batch", adapt_batch, "batch size");
    adapt_cmd->add_option("--lr", adapt_lr, "Adam learning rate");
    adapt_cmd->add_option("--seed", adapt_seed, "random seed");

    // pooled
    std::string pooled_method, pooled_source, pooled_target, pooled_out;
    int pooled_polygons = -1;
    int pooled_batch = 32;
    double pooled_lr = 1e-3, pooled_alpha = 1.0, pooled_temp = 0.05, pooled_lambda = 0.1;
    std::uint64_t pooled_seed = 0;
    ArchFlags pooled_arch;
    auto* pooled = app.add_subcommand("pooled", "train a pooled-data method (dann | mme)");
    pooled->add_option("--method", pooled_method, "dann | mme")->required();
    pooled->add_option("--source", pooled_source, "source dataset directory")->required();
    pooled->add_option("--target", pooled_target, "target training dataset directory")
        ->required();
    pooled->add_option("--out", pooled_out, "checkpoint path")->required();
    pooled->add_option("--polygons", pooled_polygons,
                       "labelled target polygons (default: all labelled)");
    pooled->add_option("--batch", pooled_batch, "batch size");
    pooled->add_option("--lr", pooled_lr, "Adam learning rate");
    pooled->add_option("--alpha", pooled_alpha, "gradient reversal coefficient (dann)");
    pooled->add_option("--temperature", pooled_temp, "prototype temperature (mme)");
    pooled->add_option("--entropy-coeff", pooled_lambda, "entropy coefficient (mme)");
    pooled->add_option("--seed", pooled_seed, "random seed");
    pooled_arch.attach(pooled);

    // eval
    std::string eval_model, eval_data, eval_report;
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a labelled dataset");
    eval_cmd->add_option("--model", eval_model, "checkpoint path")->required();
    eval_cmd->add_option("--data", eval_data, "dataset directory")->required();
    eval_cmd->add_option("--report", eval_report, "metric report JSON path")->required();

    // sweep
    std::string sweep_config, sweep_out;
    auto* sweep = app.add_subcommand("sweep", "run a full experiment sweep");
    sweep->add_option("--config", sweep_config, "experiment config JSON")->required();
    sweep->add_option("--out", sweep_out, "report output directory")->required();

    // lambda
    double lambda_tmax = 1e6;
    std::uint64_t lambda_nt = 0;
    auto* lambda_cmd =
        app.add_subcommand("lambda", "print the regularization strength for a target quantity");
    lambda_cmd->add_option("--tmax", lambda_tmax, "schedule hyperparameter t_max");
    lambda_cmd->add_option("--nt", lambda_nt, "labelled target instance count")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            const SyntheticSpec spec = synthetic_spec_from_json(read_json_file(gen_spec));
            SyntheticPair pair = generate_synthetic_pair(spec);
            const std::filesystem::path out(gen_out);
            write_dataset(pair.source, (out / "source").string());
            write_dataset(pair.target_train, (out / "target_train").string());
            write_dataset(pair.target_test, (out / "target_test").string());
            std::ofstream echo(out / "spec.json", std::ios::binary);
            echo << synthetic_spec_to_json(spec).dump(1) << "\n";
            std::cout << "generated " << pair.source.size() << " source, "
                      << pair.target_train.size() << " target train, "
                      << pair.target_test.size() << " target test instances under " << gen_out
                      << "\n";
        } else if (*train) {
            Dataset raw = read_dataset(train_data);
            NormStats stats = compute_norm_stats(raw);
            Dataset ds = normalize(raw, stats);
            MethodConfig config;
            train_arch.apply(config);
            config.budget = {train_updates, train_batch};
            config.lr = train_lr;
            config.seed = train_seed;
            TrainedModel trained = train_supervised(ds, config);
            save_checkpoint(trained.model, train_out, stats);
            std::cout << "trained on " << ds.size() << " instances, " << trained.history.updates
                      << " updates, final loss "
                      << (trained.history.losses.empty() ? 0.0 : trained.history.losses.back())
                      << ", saved " << train_out << "\n";
        } else if (*adapt_cmd) {
            LoadedTempCNN loaded = load_tempcnn_checkpoint(adapt_model);
            if (!loaded.norm_stats)
                throw std::runtime_error("checkpoint " + adapt_model +
                                         " carries no normalization stats");
            Dataset target = load_normalized(adapt_data, *loaded.norm_stats);
            if (adapt_polygons >= 0)
                target = sample_polygons(target, static_cast<std::size_t>(adapt_polygons),
                                         RngStream(adapt_seed).substream("polygons"));
            MethodConfig config;
            config.budget = {adapt_updates, adapt_batch};
            config.lr = adapt_lr;
            config.seed = adapt_seed;
            config.schedule = LambdaSchedule::with_tmax(adapt_tmax);
            TrainedModel adapted =
                adapt(loaded.model, target, adapt_mode_for(method_from_name(adapt_method)),
                      config);
            save_checkpoint(adapted.model, adapt_out, loaded.norm_stats);
            std::cout << "adapted (" << adapt_method << ") on " << target.size()
                      << " instances, " << adapted.history.updates << " updates, saved "
                      << adapt_out << "\n";
        } else if (*pooled) {
            Dataset source_raw = read_dataset(pooled_source);
            NormStats stats = compute_norm_stats(source_raw);
            Dataset source = normalize(source_raw, stats);
            Dataset target = load_normalized(pooled_target, stats);
            Dataset labelled = target;
            Dataset unlabelled;
            unlabelled = target;
            unlabelled.instances.clear();
            if (pooled_polygons >= 0) {
                labelled = sample_polygons(target, static_cast<std::size_t>(pooled_polygons),
                                           RngStream(pooled_seed).substream("polygons"));
                unlabelled = dataset_minus_polygons(target, labelled);
            }
            MethodConfig config;
            pooled_arch.apply(config);
            config.budget.batch_size = pooled_batch;
            config.lr = pooled_lr;
            config.seed = pooled_seed;
            config.dann_alpha = pooled_alpha;
            config.mme_temperature = pooled_temp;
            config.mme_lambda = pooled_lambda;
            if (pooled_method == "dann") {
                DannResult r = train_dann(source, labelled, unlabelled, config);
                save_dann_checkpoint(r.model, pooled_out, stats);
                std::cout << "dann trained, " << r.history.updates << " updates, saved "
                          << pooled_out << "\n";
            } else if (pooled_method == "mme") {
                MmeResult r = train_mme(source, labelled, unlabelled, config);
                save_mme_checkpoint(r.model, pooled_out, stats);
                std::cout << "mme trained, " << r.history.updates << " updates, saved "
                          << pooled_out << "\n";
            } else {
                throw std::runtime_error("pooled method must be dann or mme, got " +
                                         pooled_method);
            }
        } else if (*eval_cmd) {
            LoadedClassifier classifier = load_classifier(eval_model);
            if (!classifier.norm_stats)
                throw std::runtime_error("checkpoint " + eval_model +
                                         " carries no normalization stats");
            Dataset test = load_normalized(eval_data, *classifier.norm_stats);
            MetricReport report = evaluate(classifier.forward, test);
            std::ofstream out(eval_report, std::ios::binary);
            if (!out) throw std::runtime_error("cannot write " + eval_report);
            out << metric_report_json(report).dump(1) << "\n";
            std::printf("accuracy %.6f macro_f1 %.6f (%zu instances)\n",
                        report.overall_accuracy, report.macro_f1, report.total);
        } else if (*sweep) {
            ExperimentConfig config = experiment_config_from_json(read_json_file(sweep_config));
            ExperimentResults results = run_experiment(config);
            emit_reports(results, config, sweep_out);
            std::size_t failed = 0;
            for (const auto& r : results.runs) failed += r.failed;
            std::cout << "sweep finished: " << results.runs.size() << " rows (" << failed
                      << " failed), reports under " << sweep_out << "\n";
        } else if (*lambda_cmd) {
            const LambdaSchedule schedule = LambdaSchedule::with_tmax(lambda_tmax);
            const double lambda = lambda_for(lambda_nt, schedule);
            std::printf("k %.17g\n", schedule.k);
            std::printf("lambda %.17g\n", lambda);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
