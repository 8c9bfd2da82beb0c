#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tagat/matrix.hpp"

namespace tagat {

/// 1-based task index plus canonical name.
struct TaskId {
  int index = 0;
  std::string name;
};

/// The seven canonical task paradigms, in fixed order; larger banks continue
/// with generated names.
std::vector<TaskId> canonical_tasks(std::size_t m);

/// One subject-task acquisition: T x N ROI-averaged signals plus labels.
struct ScanTimeSeries {
  std::string subject_id;
  TaskId task;
  Mat64 data;            // T timepoints x N ROIs
  int gender_label = 0;  // {0, 1}
  double cog_score = 0;  // normalized into [0, 1]

  std::size_t timepoints() const { return data.rows(); }
  std::size_t rois() const { return data.cols(); }
  void validate() const;
};

/// Undirected weighted edge, i < j, w > 0.
struct Edge {
  std::uint32_t i = 0, j = 0;
  double w = 0;
  bool operator==(const Edge&) const = default;
};

/// Functional brain graph: Pearson-row node features and positive-weight
/// partial-correlation edges, plus the labels the model trains against.
struct BrainGraph {
  std::uint32_t n_nodes = 0;
  Mat64 node_features;  // N x N
  std::vector<Edge> edges;

  // provenance of the construction
  double density = 0;
  double ridge = 0;
  bool diagonal_dropped = false;

  // carried labels
  std::string subject_id;
  std::string task_name;
  int task_index = 0;
  int gender_label = 0;
  double cog_score = 0;
};

struct GraphBuildOptions {
  double density = 0.05;
  std::optional<double> ridge;  // default: 1e-3 * trace(cov) / N
  bool drop_diagonal = false;   // zero the self-correlation diagonal
};

/// Number of edges retained at a given density: ceil(density * n(n-1)/2).
std::size_t edge_budget(std::size_t n_nodes, double density);

/// Row j = Pearson correlations of ROI j with every ROI (diagonal 1 unless
/// dropped).
Mat64 build_node_features(const ScanTimeSeries& ts, bool drop_diagonal = false);

/// Top-density fraction of partial correlations, ranked by signed value;
/// throws NonPositiveEdgeWeight when the cut would retain a non-positive one.
/// ridge_used, when non-null, receives the ridge actually applied.
std::vector<Edge> build_edges(const ScanTimeSeries& ts, double density,
                              std::optional<double> ridge,
                              double* ridge_used = nullptr);

BrainGraph build_graph(const ScanTimeSeries& ts, const GraphBuildOptions& opt = {});

}  // namespace tagat
