#pragma once

#include <iomanip>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mixt/batching.hpp"
#include "mixt/common.hpp"
#include "mixt/dataset.hpp"
#include "mixt/evaluator.hpp"
#include "mixt/trainer.hpp"

namespace mixt {

// One grid cell: a checkpoint trained at `trained_shots` evaluated at
// `eval_shots`.
struct ShotsMatrixCell {
    int trained_shots = 0;
    int eval_shots = 0;
    std::string task;
    std::string metric;
    double value = 0.0;
    int n_samples = 0;
    int malformed_count = 0;
};

struct ShotsMatrixReport {
    std::vector<int> trained_shots;  // row labels, checkpoint order
    std::vector<int> eval_shots;     // column labels
    std::string task;
    std::string metric;
    std::vector<ShotsMatrixCell> cells;  // row-major over the grid

    const ShotsMatrixCell& cell(int row, int col) const {
        return cells[static_cast<size_t>(row) * eval_shots.size() + static_cast<size_t>(col)];
    }

    // Mean metric where trained shots equal eval shots vs everywhere else.
    // Off-diagonal means the shot counts differ; when no trained count ever
    // matches an eval count the diagonal mean is reported as 0 over 0 cells.
    double diagonal_mean() const { return mean_where(true); }
    double off_diagonal_mean() const { return mean_where(false); }

    // Plain-text table, rows labeled by trained shots, columns by eval shots.
    std::string render() const {
        std::ostringstream out;
        out << "trained\\eval";
        for (int m : eval_shots) out << std::setw(10) << m;
        out << "\n";
        for (size_t r = 0; r < trained_shots.size(); ++r) {
            out << std::setw(12) << trained_shots[r];
            for (size_t c = 0; c < eval_shots.size(); ++c)
                out << std::setw(10) << std::fixed << std::setprecision(4)
                    << cell(static_cast<int>(r), static_cast<int>(c)).value;
            out << "\n";
        }
        out << "diagonal mean " << std::fixed << std::setprecision(4) << diagonal_mean()
            << ", off-diagonal mean " << off_diagonal_mean() << " (" << task << " " << metric
            << ")\n";
        return out.str();
    }

  private:
    double mean_where(bool diagonal) const {
        double sum = 0.0;
        int n = 0;
        for (const auto& c : cells) {
            if ((c.trained_shots == c.eval_shots) != diagonal) continue;
            sum += c.value;
            ++n;
        }
        return n == 0 ? 0.0 : sum / n;
    }
};

// The trained-shot label a checkpoint carries; only fixed-shot training
// yields a single labeling count.
inline int trained_shots_of(const TrainState& st) {
    if (st.train_shots == "none")
        fail("checkpoint has no recorded shot policy; it was never trained");
    const ShotPolicy policy = parse_shot_policy(st.train_shots);
    if (policy.kind != ShotPolicy::Kind::fixed)
        fail("checkpoint trained with policy ", st.train_shots,
             " has no single trained-shot label; the grid needs fixed-shot checkpoints");
    return policy.n;
}

// Crosses checkpoints trained at different shot counts against a range of
// evaluation shot counts on one task and metric. The grid is an analysis
// artifact: every cell is populated and reported, no threshold is applied.
inline ShotsMatrixReport shots_matrix(const std::vector<std::string>& checkpoint_paths,
                                      const Dataset& eval_set, const Dataset* support,
                                      const std::vector<int>& eval_shots, Task task,
                                      const std::string& metric, const EvalConfig& base) {
    require(!checkpoint_paths.empty(), "shots_matrix: no checkpoints given");
    require(!eval_shots.empty(), "shots_matrix: no eval shot counts given");
    {
        std::set<std::string> unique(checkpoint_paths.begin(), checkpoint_paths.end());
        if (unique.size() != checkpoint_paths.size())
            fail("shots_matrix: duplicate checkpoint paths in the list");
    }

    ShotsMatrixReport report;
    report.eval_shots = eval_shots;
    report.task = task_name(task);
    report.metric = metric;

    for (const std::string& path : checkpoint_paths) {
        const TrainState st = load_train_state(path);
        const int trained = trained_shots_of(st);
        report.trained_shots.push_back(trained);
        for (int m : eval_shots) {
            EvalConfig ec = base;
            ec.shots = m;
            ec.run_id = base.run_id + "/trained" + std::to_string(trained) + "/eval" +
                        std::to_string(m);
            const auto records = evaluate(st.store, st.cfg, eval_set, support, ec);
            const MetricRecord* hit = nullptr;
            for (const auto& rec : records)
                if (rec.task == report.task && rec.metric == metric) hit = &rec;
            if (!hit)
                fail("shots_matrix: evaluation produced no metric \"", metric, "\" for task ",
                     report.task);
            ShotsMatrixCell cell;
            cell.trained_shots = trained;
            cell.eval_shots = m;
            cell.task = report.task;
            cell.metric = metric;
            cell.value = hit->value;
            cell.n_samples = hit->n_samples;
            cell.malformed_count = hit->malformed_count;
            report.cells.push_back(cell);
        }
    }
    return report;
}

}  // namespace mixt
