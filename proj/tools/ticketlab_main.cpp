// Command-line surface: synthetic dataset generation, ticket finding,
// transfer arms, sweeps, and reports. Exit codes: 0 success, 1 usage,
// 2 data error, 3 training failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>

#include "ticketlab/serial.hpp"
#include "ticketlab/sweep.hpp"

namespace fs = std::filesystem;
using namespace ticketlab;

namespace {

struct ModelArgs {
    std::string model = "mlp";
    std::string hidden = "300,100";
    std::string plan = "1:8:2,2:16:2,2:32:2";
};

void add_model_options(CLI::App* cmd, ModelArgs& args) {
    cmd->add_option("--model", args.model, "Architecture: mlp or mini-resnet")
        ->check(CLI::IsMember({"mlp", "mini-resnet"}));
    cmd->add_option("--hidden", args.hidden, "MLP hidden widths, e.g. 300,100");
    cmd->add_option("--plan", args.plan, "Residual stage plan stride:channels:repeats,...");
}

ModelSpec make_spec(const ModelArgs& args, const DatasetSplit& data) {
    std::string s = args.model + ";in=";
    for (size_t i = 0; i < data.input_shape.size(); ++i)
        s += (i ? "x" : "") + std::to_string(data.input_shape[i]);
    if (args.model == "mlp")
        s += ";hidden=" + args.hidden;
    else
        s += ";plan=" + args.plan;
    s += ";classes=" + std::to_string(data.num_classes);
    return spec_from_string(s);
}

struct TrainArgs {
    size_t max_epochs = 90;
    size_t batch_size = 64;
    double learning_rate = 0.1;
    size_t patience = 5;
};

void add_train_options(CLI::App* cmd, TrainArgs& args) {
    cmd->add_option("--max-epochs", args.max_epochs, "Epoch cap");
    cmd->add_option("--batch-size", args.batch_size, "Mini-batch size");
    cmd->add_option("--lr", args.learning_rate, "Initial learning rate");
    cmd->add_option("--patience", args.patience, "Early-stopping patience");
}

TrainConfig make_train_cfg(const TrainArgs& args, uint64_t seed) {
    TrainConfig cfg;
    cfg.max_epochs = args.max_epochs;
    cfg.batch_size = args.batch_size;
    cfg.learning_rate = static_cast<float>(args.learning_rate);
    cfg.patience = args.patience;
    cfg.seed = seed;
    return cfg;
}

void write_arm_result(const ArmResult& res, const std::string& out_dir) {
    SweepRow row;
    row.target = res.target_dataset;
    row.arm = to_string(res.kind);
    row.source = res.source_dataset;
    row.round = res.round;
    row.sparsity = res.sparsity;
    row.seed = res.seed;
    row.test_accuracy = res.test_accuracy;
    row.stopped_epoch = res.stopped_epoch;
    row.best_val_epoch = res.best_val_epoch;
    char name[160];
    std::snprintf(name, sizeof name, "%s__%s__r%zu__s%llu.json", row.arm.c_str(),
                  row.source.c_str(), row.round, static_cast<unsigned long long>(row.seed));
    write_text_file((fs::path(out_dir) / name).string(), cell_to_json(row));
    std::printf("%s  accuracy=%.4f  sparsity=%.4f  -> %s\n", row.arm.c_str(), row.test_accuracy,
                row.sparsity, name);
}

int run(int argc, char** argv) {
    CLI::App app{"Desk-scale lottery-ticket laboratory"};
    app.require_subcommand(1);

    // ------------------------------------------------------------- synth
    auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset container");
    std::string synth_kind = "natural-proxy";
    size_t synth_classes = 10, synth_per_class = 1000, synth_size = 16;
    uint64_t synth_seed = 0;
    std::string synth_out;
    synth->add_option("--kind", synth_kind, "natural-proxy or texture-proxy")->required();
    synth->add_option("--classes", synth_classes, "Number of classes");
    synth->add_option("--per-class", synth_per_class, "Training samples per class");
    synth->add_option("--size", synth_size, "Image side length");
    synth->add_option("--seed", synth_seed, "Generator seed");
    synth->add_option("--out", synth_out, "Output container path")->required();
    synth->callback([&] {
        const DatasetSplit ds = make_synthetic(synth_kind_from_string(synth_kind), synth_classes,
                                               synth_per_class, synth_size, synth_seed);
        save_dataset(ds, synth_out);
        std::printf("wrote %s: %zu train / %zu val / %zu test, %zu classes, %s\n",
                    synth_out.c_str(), ds.train.size(), ds.val.size(), ds.test.size(),
                    ds.num_classes, shape_str(ds.input_shape).c_str());
    });

    // ------------------------------------------------------ find-tickets
    auto* find = app.add_subcommand("find-tickets", "Iterative magnitude pruning ladder");
    std::string ft_data, ft_out, ft_scope = "global";
    size_t ft_rounds = 31, ft_k = 2;
    double ft_rate = 0.2;
    uint64_t ft_seed = 0;
    ModelArgs ft_model;
    TrainArgs ft_train;
    find->add_option("--data", ft_data, "Source dataset container")->required();
    find->add_option("--rounds", ft_rounds, "Pruning rounds");
    find->add_option("--k", ft_k, "Late-reset epoch (0 = original initialization)");
    find->add_option("--prune-rate", ft_rate, "Fraction pruned per round");
    find->add_option("--scope", ft_scope, "global or per-layer")
        ->check(CLI::IsMember({"global", "per-layer"}));
    find->add_option("--seed", ft_seed, "Init and data-order seed");
    find->add_option("--out", ft_out, "Output directory")->required();
    add_model_options(find, ft_model);
    add_train_options(find, ft_train);
    find->callback([&] {
        const DatasetSplit data = load_dataset(ft_data);
        const ModelSpec spec = make_spec(ft_model, data);
        const TrainConfig cfg = make_train_cfg(ft_train, ft_seed);
        PruneConfig pcfg;
        pcfg.rate = ft_rate;
        pcfg.scope = ft_scope == "global" ? PruneScope::Global : PruneScope::PerLayer;
        const InitSpec init{InitScheme::XavierUniform, ft_seed};

        const TicketLadder ladder = find_tickets(spec, init, data, cfg, pcfg, ft_rounds, ft_k);
        fs::create_directories(ft_out);
        for (const auto& bundle : ladder.bundles) {
            char name[32];
            std::snprintf(name, sizeof name, "round_%02zu.ticket", bundle.round);
            save_ticket(bundle, (fs::path(ft_out) / name).string());
            if (bundle.round < ladder.trained.size()) {
                std::snprintf(name, sizeof name, "trained_%02zu.ticket", bundle.round);
                save_ticket(fully_trained_variant(ladder, bundle.round),
                            (fs::path(ft_out) / name).string());
            }
        }
        std::string csv = "round,sparsity,test_accuracy,val_loss,stopped_epoch,best_val_epoch\n";
        for (const auto& m : ladder.metrics) {
            char line[160];
            std::snprintf(line, sizeof line, "%zu,%.6f,%.6f,%.6f,%zu,%zu\n", m.round, m.sparsity,
                          m.test_accuracy, m.val_loss, m.stopped_epoch, m.best_val_epoch);
            csv += line;
        }
        write_text_file((fs::path(ft_out) / "ladder.csv").string(), csv);
        std::string meta;
        meta += "source_dataset = " + ladder.source_dataset + "\n";
        meta += "model_spec = " + spec_to_string(spec) + "\n";
        meta += "k = " + std::to_string(ladder.k) + "\n";
        meta += "init_seed = " + std::to_string(ladder.init_seed) + "\n";
        meta += "rounds = " + std::to_string(ladder.bundles.size()) + "\n";
        meta += "prune_rate = " + std::to_string(ft_rate) + "\n";
        meta += "prune_scope = " + ft_scope + "\n";
        meta += "head_prunable_during_search = true\n";
        meta += "created_by = " + std::string(kToolName) + " " + kToolVersion + "\n";
        if (!ladder.diagnostic.empty()) meta += "diagnostic = " + ladder.diagnostic + "\n";
        write_text_file((fs::path(ft_out) / "ladder.meta").string(), meta);
        std::printf("wrote %zu tickets to %s (baseline accuracy %.4f)\n", ladder.bundles.size(),
                    ft_out.c_str(), ladder.metrics.empty() ? 0.0 : ladder.metrics[0].test_accuracy);
        if (!ladder.diagnostic.empty()) {
            std::fprintf(stderr, "ladder incomplete: %s\n", ladder.diagnostic.c_str());
            throw TrainingError(ladder.diagnostic);
        }
    });

    // ----------------------------------------------------------- transfer
    auto* transfer = app.add_subcommand("transfer", "Fine-tune a ticket on a target dataset");
    std::string tr_ticket, tr_data, tr_arm = "source_ticket", tr_out;
    uint64_t tr_seed = 0;
    TrainArgs tr_train;
    transfer->add_option("--ticket", tr_ticket, "Ticket container file")->required();
    transfer->add_option("--data", tr_data, "Target dataset container")->required();
    transfer->add_option("--arm", tr_arm, "source_ticket, random_reinit or fully_trained");
    transfer->add_option("--seed", tr_seed, "Fine-tuning seed");
    transfer->add_option("--out", tr_out, "Output directory")->required();
    add_train_options(transfer, tr_train);
    transfer->callback([&] {
        const DatasetSplit target = load_dataset(tr_data);
        TransferArm arm;
        arm.kind = arm_kind_from_string(tr_arm);
        if (arm.kind == ArmKind::ScratchUnpruned)
            throw UsageError("use the scratch subcommand for the scratch arm");
        arm.bundle = load_ticket(tr_ticket);
        arm.seed = tr_seed;
        fs::create_directories(tr_out);
        write_arm_result(run_arm(arm, target, make_train_cfg(tr_train, tr_seed)), tr_out);
    });

    // ------------------------------------------------------------ scratch
    auto* scratch = app.add_subcommand("scratch", "Train an unpruned baseline from scratch");
    std::string sc_data, sc_out;
    uint64_t sc_seed = 0;
    ModelArgs sc_model;
    TrainArgs sc_train;
    scratch->add_option("--data", sc_data, "Target dataset container")->required();
    scratch->add_option("--seed", sc_seed, "Training seed");
    scratch->add_option("--out", sc_out, "Output directory")->required();
    add_model_options(scratch, sc_model);
    add_train_options(scratch, sc_train);
    scratch->callback([&] {
        const DatasetSplit target = load_dataset(sc_data);
        const ModelSpec spec = make_spec(sc_model, target);
        fs::create_directories(sc_out);
        write_arm_result(
            scratch_baseline(spec, target, make_train_cfg(sc_train, sc_seed), sc_seed), sc_out);
    });

    // -------------------------------------------------------------- sweep
    auto* sweep = app.add_subcommand("sweep", "Run every cell of an experiment plan");
    std::string sw_plan, sw_out;
    size_t sw_jobs = 1;
    sweep->add_option("--plan", sw_plan, "Plan file")->required();
    sweep->add_option("--jobs", sw_jobs, "Concurrent cells");
    sweep->add_option("--out", sw_out, "Output directory")->required();
    sweep->callback([&] {
        const SweepPlan plan = parse_plan_file(sw_plan);
        SweepStats stats;
        const SweepReport report = run_sweep(plan, sw_out, sw_jobs, &stats);
        std::printf("sweep: %zu computed, %zu skipped, %zu failed; %zu rows in %s\n",
                    stats.computed, stats.skipped, stats.failed, report.rows.size(),
                    sweep_cell_dir(plan, sw_out).c_str());
        if (stats.failed > 0)
            std::fprintf(stderr, "warning: %zu cells failed; see their .json files\n", stats.failed);
    });

    // ------------------------------------------------------------- report
    auto* report_cmd = app.add_subcommand("report", "Aggregate cell files into csv or a table");
    std::string rp_in, rp_format = "csv", rp_out;
    report_cmd->add_option("--in", rp_in, "Directory of cell .json files")->required();
    report_cmd->add_option("--format", rp_format, "csv or table")
        ->check(CLI::IsMember({"csv", "table"}));
    report_cmd->add_option("--out", rp_out, "Output file")->required();
    report_cmd->callback([&] {
        const SweepReport report = report_from_dir(rp_in);
        if (report.rows.empty()) throw DataError(DataError::Kind::EmptySplit, "no cell files in " + rp_in);
        write_text_file(rp_out, rp_format == "csv" ? to_csv(report) : to_table(report));
        std::printf("wrote %s (%zu rows)\n", rp_out.c_str(), report.rows.size());
    });

    // ---------------------------------------------------------- subsample
    auto* sub = app.add_subcommand("subsample", "Stratified reduction of the training split");
    std::string su_data, su_out;
    double su_fraction = 1.0;
    uint64_t su_seed = 0;
    sub->add_option("--data", su_data, "Dataset container")->required();
    sub->add_option("--fraction", su_fraction, "Fraction of the train split to keep")->required();
    sub->add_option("--seed", su_seed, "Selection seed");
    sub->add_option("--out", su_out, "Output container path")->required();
    sub->callback([&] {
        const DatasetSplit ds = load_dataset(su_data);
        const DatasetSplit out = subsample(ds, SubsampleSpec{su_fraction, su_seed, true});
        save_dataset(out, su_out);
        std::printf("wrote %s: train %zu -> %zu samples\n", su_out.c_str(), ds.train.size(),
                    out.train.size());
    });

    CLI11_PARSE(app, argc, argv);
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const UsageError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return kExitUsage;
    } catch (const TrainingError& e) {
        std::fprintf(stderr, "training failure: %s\n", e.what());
        return kExitTraining;
    } catch (const NumericsError& e) {
        std::fprintf(stderr, "training failure: %s\n", e.what());
        return kExitTraining;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitData;
    }
}
