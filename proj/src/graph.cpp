#include "tagat/graph.hpp"

#include <algorithm>
#include <cmath>

#include "tagat/errors.hpp"

namespace tagat {

std::vector<TaskId> canonical_tasks(std::size_t m) {
  static const char* kNames[] = {"emotion",    "gambling", "language", "motor",
                                 "relational", "social",   "wm"};
  std::vector<TaskId> tasks;
  tasks.reserve(m);
  for (std::size_t k = 0; k < m; ++k) {
    std::string name = k < 7 ? kNames[k] : "task" + std::to_string(k + 1);
    tasks.push_back(TaskId{static_cast<int>(k + 1), std::move(name)});
  }
  return tasks;
}

void ScanTimeSeries::validate() const {
  if (data.rows() < 3 || data.cols() < 2)
    throw ShapeMismatch("scan " + subject_id + "/" + task.name + ": time series is " +
                        std::to_string(data.rows()) + "x" + std::to_string(data.cols()));
  if (!data.all_finite())
    throw Error("scan " + subject_id + "/" + task.name + ": non-finite sample");
  if (gender_label != 0 && gender_label != 1)
    throw Error("scan " + subject_id + ": gender label must be 0 or 1");
  if (!(cog_score >= 0.0 && cog_score <= 1.0))
    throw Error("scan " + subject_id + ": cognitive score " + std::to_string(cog_score) +
                " outside [0,1]");
  if (task.index < 1) throw UnknownTask(task.index);
}

std::size_t edge_budget(std::size_t n_nodes, double density) {
  const double pairs = static_cast<double>(n_nodes) * static_cast<double>(n_nodes - 1) / 2.0;
  return static_cast<std::size_t>(std::ceil(density * pairs));
}

Mat64 build_node_features(const ScanTimeSeries& ts, bool drop_diagonal) {
  Mat64 corr = pearson_corr_matrix(ts.data);
  if (drop_diagonal)
    for (std::size_t i = 0; i < corr.rows(); ++i) corr(i, i) = 0.0;
  return corr;
}

std::vector<Edge> build_edges(const ScanTimeSeries& ts, double density,
                              std::optional<double> ridge, double* ridge_used) {
  if (!(density > 0.0 && density < 1.0))
    throw Error("build_edges: density " + std::to_string(density) + " outside (0,1)");
  const Mat64 cov = covariance(ts.data);
  const std::size_t n = cov.rows();

  double eps = ridge.value_or(0.0);
  if (!ridge.has_value()) {
    double trace = 0.0;
    for (std::size_t i = 0; i < n; ++i) trace += cov(i, i);
    eps = 1e-3 * trace / static_cast<double>(n);
    if (eps <= 0.0) eps = 1e-6;
  }
  if (ridge_used) *ridge_used = eps;

  const Mat64 rho = partial_corr(precision_ridge(cov, eps));

  std::vector<Edge> all;
  all.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      all.push_back(Edge{static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j), rho(i, j)});

  // Rank by signed value, descending; ties broken by (i, j) lexicographic
  // order so the cut is deterministic.
  std::sort(all.begin(), all.end(), [](const Edge& a, const Edge& b) {
    if (a.w != b.w) return a.w > b.w;
    if (a.i != b.i) return a.i < b.i;
    return a.j < b.j;
  });

  const std::size_t keep = std::min(edge_budget(n, density), all.size());
  for (std::size_t k = 0; k < keep; ++k)
    if (!(all[k].w > 0.0)) throw NonPositiveEdgeWeight(all[k].i, all[k].j, all[k].w);

  std::vector<Edge> kept(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep));
  // Canonical storage order.
  std::sort(kept.begin(), kept.end(), [](const Edge& a, const Edge& b) {
    if (a.i != b.i) return a.i < b.i;
    return a.j < b.j;
  });
  return kept;
}

BrainGraph build_graph(const ScanTimeSeries& ts, const GraphBuildOptions& opt) {
  ts.validate();
  BrainGraph g;
  g.n_nodes = static_cast<std::uint32_t>(ts.rois());
  g.node_features = build_node_features(ts, opt.drop_diagonal);
  double ridge_used = 0.0;
  g.edges = build_edges(ts, opt.density, opt.ridge, &ridge_used);
  g.density = opt.density;
  g.ridge = ridge_used;
  g.diagonal_dropped = opt.drop_diagonal;
  g.subject_id = ts.subject_id;
  g.task_name = ts.task.name;
  g.task_index = ts.task.index;
  g.gender_label = ts.gender_label;
  g.cog_score = ts.cog_score;
  return g;
}

}  // namespace tagat
