#pragma once

#include <string>
#include <vector>

#include "ifenn/coupling.hpp"
#include "ifenn/fem.hpp"
#include "ifenn/nn.hpp"
#include "ifenn/problems.hpp"

namespace ifenn {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Versioned tensor file: magic line, one-line JSON header (kind, shape,
/// feature names, increment count, mesh checksum, auxiliary arrays),
/// then the payload as little-endian float64 in row-major order.
struct TensorFile {
  nlohmann::json header;
  std::vector<double> data;
};

void save_tensor(const std::string& path, const TensorFile& t);
TensorFile load_tensor(const std::string& path);

/// Writes dataset_a.tns (inputs), dataset_b.tns (labels) and, when the
/// Laplacian is present, dataset_c.tns into dir.
void save_datasets(const Datasets& ds, const std::string& dir);
Datasets load_datasets(const std::string& dir);

void write_reaction_csv(const std::string& path, const std::vector<IncrementResult>& recs);
void write_ifenn_reaction_csv(const std::string& path,
                              const std::vector<IfennIncrement>& recs);
void write_residual_log_csv(const std::string& path,
                            const std::vector<IncrementResult>& recs);
void write_ifenn_residual_log_csv(const std::string& path,
                                  const std::vector<IfennIncrement>& recs);
void write_loss_csv(const std::string& path, const std::vector<LossBreakdown>& history);
void write_rse_csv(const std::string& path, const std::vector<double>& lf,
                   const std::vector<double>& rse_per_increment);
void write_compare_csv(const std::string& path, const std::vector<double>& lf,
                       const CompareReport& report);

/// Per-increment curve bundle consumed by the compare command.
void write_series_csv(const std::string& path, const RunSeries& series);
RunSeries read_series_csv(const std::string& path);

/// Field snapshot (one value per GP) in the tensor format.
void save_field_snapshot(const std::string& path, const std::string& kind,
                         const Eigen::MatrixXd& gp_xy, const Eigen::VectorXd& values,
                         double lf, std::uint64_t mesh_checksum);

}  // namespace ifenn
