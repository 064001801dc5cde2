#include "ticketlab/sweep.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <mutex>
#include <sstream>
#include <thread>

#include "ticketlab/rng.hpp"
#include "ticketlab/serial.hpp"

namespace ticketlab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, sep)) {
        tok = trim(tok);
        if (!tok.empty()) out.push_back(tok);
    }
    return out;
}

std::vector<size_t> parse_rounds(const std::string& s) {
    std::vector<size_t> out;
    for (const auto& tok : split_list(s, ',')) {
        const auto dots = tok.find("..");
        if (dots != std::string::npos) {
            const size_t lo = std::stoull(tok.substr(0, dots));
            const size_t hi = std::stoull(tok.substr(dots + 2));
            if (hi < lo) throw UsageError("bad round range: " + tok);
            for (size_t r = lo; r <= hi; ++r) out.push_back(r);
        } else {
            out.push_back(std::stoull(tok));
        }
    }
    if (out.empty()) throw UsageError("plan has an empty round list");
    return out;
}

// Shortest exact decimal representation, for byte-stable reports.
std::string fmt_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc())
        throw DataError(DataError::Kind::Malformed, "bad number in report: " + s);
    return v;
}

std::string sanitize(const std::string& s) {
    std::string out;
    for (char c : s)
        out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
    return out;
}

std::string ticket_path(const PlanArm& arm, size_t round) {
    char name[48];
    const bool trained = arm.kind == ArmKind::FullyTrainedTransfer;
    std::snprintf(name, sizeof name, "%s_%02zu.ticket", trained ? "trained" : "round", round);
    return (fs::path(arm.ladder_dir) / name).string();
}

}  // namespace

uint64_t SweepPlan::content_hash() const { return fnv1a64(raw_text); }

size_t SweepPlan::cell_count() const {
    size_t n = 0;
    for (const auto& arm : arms)
        n += (arm.kind == ArmKind::ScratchUnpruned ? 1 : rounds.size()) * seeds.size();
    return n;
}

SweepPlan parse_plan_text(const std::string& text) {
    SweepPlan plan;
    plan.raw_text = text;
    std::stringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) {
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw UsageError("plan line without '=': " + line);
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (key == "target") {
            plan.target_path = val;
        } else if (key == "target_label") {
            plan.target_label = val;
        } else if (key == "model") {
            plan.model_spec_string = val;
        } else if (key == "rounds") {
            plan.rounds = parse_rounds(val);
        } else if (key == "seeds") {
            plan.seeds.clear();
            for (const auto& s : split_list(val, ',')) plan.seeds.push_back(std::stoull(s));
        } else if (key == "arm") {
            PlanArm arm;
            const auto toks = split_list(val, ' ');
            if (toks.empty()) throw UsageError("empty arm line");
            arm.kind = arm_kind_from_string(toks[0]);
            for (size_t i = 1; i < toks.size(); ++i) {
                const auto e = toks[i].find('=');
                if (e == std::string::npos) throw UsageError("bad arm option: " + toks[i]);
                const std::string ok = toks[i].substr(0, e), ov = toks[i].substr(e + 1);
                if (ok == "source")
                    arm.ladder_dir = ov;
                else if (ok == "label")
                    arm.source_label = ov;
                else
                    throw UsageError("unknown arm option: " + ok);
            }
            if (arm.kind != ArmKind::ScratchUnpruned && arm.ladder_dir.empty())
                throw UsageError(std::string("arm ") + to_string(arm.kind) + " needs source=DIR");
            if (arm.source_label == "-" && !arm.ladder_dir.empty())
                arm.source_label = sanitize(fs::path(arm.ladder_dir).filename().string());
            plan.arms.push_back(arm);
        } else if (key == "learning_rate") {
            plan.train_cfg.learning_rate = std::stof(val);
        } else if (key == "momentum") {
            plan.train_cfg.momentum = std::stof(val);
        } else if (key == "weight_decay") {
            plan.train_cfg.weight_decay = std::stof(val);
        } else if (key == "batch_size") {
            plan.train_cfg.batch_size = std::stoull(val);
        } else if (key == "patience") {
            plan.train_cfg.patience = std::stoull(val);
        } else if (key == "max_epochs") {
            plan.train_cfg.max_epochs = std::stoull(val);
        } else if (key == "anneal_factor") {
            plan.train_cfg.anneal_factor = std::stof(val);
        } else if (key == "anneal_epochs") {
            plan.train_cfg.anneal_epochs.clear();
            for (const auto& s : split_list(val, ','))
                plan.train_cfg.anneal_epochs.push_back(std::stoull(s));
        } else {
            throw UsageError("unknown plan key: " + key);
        }
    }
    if (plan.target_path.empty()) throw UsageError("plan is missing target = PATH");
    if (plan.arms.empty()) throw UsageError("plan has no arms");
    if (plan.seeds.empty()) throw UsageError("plan has no seeds");
    if (plan.target_label.empty())
        plan.target_label = sanitize(fs::path(plan.target_path).stem().string());
    plan.train_cfg.validate();
    return plan;
}

SweepPlan parse_plan_file(const std::string& path) {
    return parse_plan_text(read_text_file(path));
}

std::string cell_to_json(const SweepRow& row) {
    json j;
    j["target"] = row.target;
    j["arm"] = row.arm;
    j["source"] = row.source;
    j["round"] = row.round;
    j["sparsity"] = row.sparsity;
    j["seed"] = row.seed;
    j["test_accuracy"] = row.test_accuracy;
    j["stopped_epoch"] = row.stopped_epoch;
    j["best_val_epoch"] = row.best_val_epoch;
    j["status"] = row.status;
    if (!row.error.empty()) j["error"] = row.error;
    return j.dump(2) + "\n";
}

SweepRow cell_from_json(const std::string& text) {
    json j = json::parse(text, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded())
        throw DataError(DataError::Kind::Malformed, "cell file is not valid JSON");
    SweepRow row;
    row.target = j.value("target", "");
    row.arm = j.value("arm", "");
    row.source = j.value("source", "-");
    row.round = j.value("round", size_t{0});
    row.sparsity = j.value("sparsity", 0.0);
    row.seed = j.value("seed", uint64_t{0});
    row.test_accuracy = j.value("test_accuracy", 0.0);
    row.stopped_epoch = j.value("stopped_epoch", size_t{0});
    row.best_val_epoch = j.value("best_val_epoch", size_t{0});
    row.status = j.value("status", "ok");
    row.error = j.value("error", "");
    return row;
}

std::string sweep_cell_dir(const SweepPlan& plan, const std::string& out_dir) {
    char hash[32];
    std::snprintf(hash, sizeof hash, "plan-%016llx",
                  static_cast<unsigned long long>(plan.content_hash()));
    return (fs::path(out_dir) / hash).string();
}

namespace {

struct Cell {
    PlanArm arm;
    size_t round = 0;
    uint64_t seed = 0;
};

std::string cell_filename(const SweepPlan& plan, const Cell& c) {
    std::ostringstream os;
    os << sanitize(plan.target_label) << "__" << to_string(c.arm.kind) << "__"
       << sanitize(c.arm.source_label) << "__r" << c.round << "__s" << c.seed << ".json";
    return os.str();
}

class TicketCache {
public:
    std::shared_ptr<const TicketBundle> get(const std::string& path) {
        std::lock_guard<std::mutex> lock(mu_);
        auto it = cache_.find(path);
        if (it != cache_.end()) return it->second;
        auto bundle = std::make_shared<const TicketBundle>(load_ticket(path));
        cache_.emplace(path, bundle);
        return bundle;
    }

private:
    std::mutex mu_;
    std::map<std::string, std::shared_ptr<const TicketBundle>> cache_;
};

SweepRow compute_cell(const SweepPlan& plan, const Cell& cell, const DatasetSplit& target,
                      TicketCache& tickets) {
    SweepRow row;
    row.target = plan.target_label;
    row.arm = to_string(cell.arm.kind);
    row.source = cell.arm.source_label;
    row.round = cell.round;
    row.seed = cell.seed;
    try {
        TransferArm arm;
        arm.kind = cell.arm.kind;
        arm.seed = cell.seed;
        arm.target_dataset = plan.target_label;
        if (cell.arm.kind == ArmKind::ScratchUnpruned) {
            if (plan.model_spec_string.empty())
                throw UsageError("plan has a scratch arm but no model = SPEC line");
            arm.scratch_spec = spec_from_string(plan.model_spec_string);
        } else {
            arm.bundle = *tickets.get(ticket_path(cell.arm, cell.round));
        }
        const ArmResult res = run_arm(arm, target, plan.train_cfg);
        row.sparsity = res.sparsity;
        row.test_accuracy = res.test_accuracy;
        row.stopped_epoch = res.stopped_epoch;
        row.best_val_epoch = res.best_val_epoch;
    } catch (const std::exception& e) {
        row.status = "error";
        row.error = e.what();
    }
    return row;
}

}  // namespace

SweepReport run_sweep(const SweepPlan& plan, const std::string& out_dir, size_t jobs,
                      SweepStats* stats, size_t max_cells) {
    const DatasetSplit target = load_dataset(plan.target_path);
    const std::string dir = sweep_cell_dir(plan, out_dir);
    fs::create_directories(dir);
    write_text_file((fs::path(dir) / "plan.txt").string(), plan.raw_text);

    std::vector<Cell> cells;
    for (const auto& arm : plan.arms) {
        const std::vector<size_t> rounds =
            arm.kind == ArmKind::ScratchUnpruned ? std::vector<size_t>{0} : plan.rounds;
        for (size_t r : rounds)
            for (uint64_t s : plan.seeds) cells.push_back({arm, r, s});
    }

    SweepStats local;
    TicketCache tickets;
    std::vector<SweepRow> rows(cells.size());
    std::vector<uint8_t> have(cells.size(), 0);
    std::atomic<size_t> next{0};
    std::atomic<size_t> budget{max_cells};
    std::mutex stats_mu;

    auto worker = [&]() {
        for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= cells.size()) return;
            const std::string path = (fs::path(dir) / cell_filename(plan, cells[i])).string();
            if (fs::exists(path)) {
                rows[i] = cell_from_json(read_text_file(path));
                have[i] = 1;
                std::lock_guard<std::mutex> lock(stats_mu);
                ++local.skipped;
                continue;
            }
            // Respect the computation budget (used to simulate interruption).
            size_t b = budget.load();
            do {
                if (b == 0) return;
            } while (!budget.compare_exchange_weak(b, b - 1));
            SweepRow row = compute_cell(plan, cells[i], target, tickets);
            write_text_file(path, cell_to_json(row));
            rows[i] = std::move(row);
            have[i] = 1;
            std::lock_guard<std::mutex> lock(stats_mu);
            ++local.computed;
            if (rows[i].status != "ok") ++local.failed;
        }
    };

    jobs = std::max<size_t>(1, jobs);
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (size_t t = 0; t < jobs; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    SweepReport report;
    for (size_t i = 0; i < cells.size(); ++i)
        if (have[i]) report.rows.push_back(std::move(rows[i]));
    report.sort_rows();
    if (stats) *stats = local;
    return report;
}

SweepReport report_from_dir(const std::string& dir) {
    SweepReport report;
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".json")
            files.push_back(e.path().string());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) report.rows.push_back(cell_from_json(read_text_file(f)));
    report.sort_rows();
    return report;
}

void SweepReport::sort_rows() {
    std::sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) {
        return std::tie(a.target, a.arm, a.source, a.round, a.seed) <
               std::tie(b.target, b.arm, b.source, b.round, b.seed);
    });
    // Rows must be unique on (target, arm, source, round, seed).
    for (size_t i = 1; i < rows.size(); ++i) {
        const auto& a = rows[i - 1];
        const auto& b = rows[i];
        if (std::tie(a.target, a.arm, a.source, a.round, a.seed) ==
            std::tie(b.target, b.arm, b.source, b.round, b.seed))
            throw DataError(DataError::Kind::Malformed,
                            "duplicate report row: " + a.target + "/" + a.arm + "/" + a.source +
                                "/r" + std::to_string(a.round) + "/s" + std::to_string(a.seed));
    }
}

std::vector<SweepReport::Aggregate> SweepReport::aggregates() const {
    std::vector<Aggregate> out;
    std::map<std::tuple<std::string, std::string, std::string, size_t>, std::vector<const SweepRow*>>
        groups;
    for (const auto& r : rows)
        if (r.status == "ok")
            groups[{r.target, r.arm, r.source, r.round}].push_back(&r);
    for (const auto& [key, members] : groups) {
        Aggregate a;
        std::tie(a.target, a.arm, a.source, a.round) = key;
        a.n = members.size();
        a.sparsity = members.front()->sparsity;
        double sum = 0;
        for (const auto* m : members) sum += m->test_accuracy;
        a.acc_mean = sum / static_cast<double>(a.n);
        if (a.n >= 2) {
            double ss = 0;
            for (const auto* m : members) {
                const double d = m->test_accuracy - a.acc_mean;
                ss += d * d;
            }
            a.acc_std = std::sqrt(ss / static_cast<double>(a.n));  // population std
        }
        out.push_back(a);
    }
    return out;
}

std::string to_csv(const SweepReport& report) {
    std::ostringstream os;
    os << "row,target,arm,source,round,sparsity,seed,test_accuracy,stopped_epoch,best_val_epoch,"
          "acc_mean,acc_std,n_seeds\n";
    for (const auto& r : report.rows) {
        if (r.status != "ok") {
            os << "error," << r.target << ',' << r.arm << ',' << r.source << ',' << r.round
               << ",,," << r.seed << ",,,,\n";
            continue;
        }
        os << "cell," << r.target << ',' << r.arm << ',' << r.source << ',' << r.round << ','
           << fmt_double(r.sparsity) << ',' << r.seed << ',' << fmt_double(r.test_accuracy) << ','
           << r.stopped_epoch << ',' << r.best_val_epoch << ",,,\n";
    }
    for (const auto& a : report.aggregates()) {
        os << "aggregate," << a.target << ',' << a.arm << ',' << a.source << ',' << a.round << ','
           << fmt_double(a.sparsity) << ",,,,," << fmt_double(a.acc_mean) << ','
           << (a.n >= 2 ? fmt_double(a.acc_std) : std::string()) << ',' << a.n << '\n';
    }
    return os.str();
}

SweepReport parse_csv(const std::string& csv) {
    SweepReport report;
    std::stringstream ss(csv);
    std::string line;
    bool first = true;
    while (std::getline(ss, line)) {
        if (first) {
            first = false;
            continue;  // header
        }
        if (line.empty()) continue;
        const auto cols = [&] {
            std::vector<std::string> out;
            std::stringstream ls(line);
            std::string tok;
            while (std::getline(ls, tok, ',')) out.push_back(tok);
            while (out.size() < 13) out.push_back("");
            return out;
        }();
        if (cols[0] == "aggregate") continue;  // recomputed from cells
        if (cols[0] == "error") continue;      // error cells carry no metrics
        if (cols[0] != "cell")
            throw DataError(DataError::Kind::Malformed, "unknown csv row type: " + cols[0]);
        SweepRow r;
        r.target = cols[1];
        r.arm = cols[2];
        r.source = cols[3];
        r.round = std::stoull(cols[4]);
        r.sparsity = parse_double(cols[5]);
        r.seed = std::stoull(cols[6]);
        r.test_accuracy = parse_double(cols[7]);
        r.stopped_epoch = std::stoull(cols[8]);
        r.best_val_epoch = std::stoull(cols[9]);
        report.rows.push_back(std::move(r));
    }
    report.sort_rows();
    return report;
}

std::string to_table(const SweepReport& report) {
    const auto aggs = report.aggregates();
    std::vector<std::string> targets;
    for (const auto& a : aggs)
        if (std::find(targets.begin(), targets.end(), a.target) == targets.end())
            targets.push_back(a.target);

    std::ostringstream os;
    for (const auto& target : targets) {
        // Best round per (arm, source): highest mean accuracy, ties to the
        // lower round.
        std::map<std::pair<std::string, std::string>, const SweepReport::Aggregate*> best;
        for (const auto& a : aggs) {
            if (a.target != target) continue;
            auto& slot = best[{a.arm, a.source}];
            if (!slot || a.acc_mean > slot->acc_mean ||
                (a.acc_mean == slot->acc_mean && a.round < slot->round))
                slot = &a;
        }
        const SweepReport::Aggregate* winner = nullptr;
        for (const auto& [key, a] : best)
            if (!winner || a->acc_mean > winner->acc_mean) winner = a;

        os << "target: " << target << '\n';
        char buf[160];
        std::snprintf(buf, sizeof buf, "  %-16s %-16s %5s %9s %18s %6s\n", "arm", "source", "round",
                      "sparsity", "accuracy % (mean)", "seeds");
        os << buf;
        for (const auto& [key, a] : best) {
            char acc[48];
            if (a->n >= 2)
                std::snprintf(acc, sizeof acc, "%6.2f +- %.2f", 100.0 * a->acc_mean,
                              100.0 * a->acc_std);
            else
                std::snprintf(acc, sizeof acc, "%6.2f", 100.0 * a->acc_mean);
            std::snprintf(buf, sizeof buf, "  %-16s %-16s %5zu %9.3f %18s %6zu%s\n",
                          a->arm.c_str(), a->source.c_str(), a->round, a->sparsity, acc, a->n,
                          a == winner ? "   <- best" : "");
            os << buf;
        }
        os << '\n';
    }
    return os.str();
}

}  // namespace ticketlab
