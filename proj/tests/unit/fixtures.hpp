#pragma once

#include <array>
#include <vector>

#include <Eigen/Dense>

#include "iafm/glmm/design.hpp"
#include "iafm/glmm/laplace.hpp"
#include "iafm/ingest.hpp"
#include "iafm/synthgen.hpp"

namespace fixtures {

/// Small synthetic population with the default generating values.
inline iafm::synth::GenParams small_params(int students, int kcs = 4, int opps = 10,
                                           std::uint64_t seed = 7) {
  auto p = iafm::synth::default_gen_params();
  p.n_students = students;
  p.kcs_per_student = kcs;
  p.opps_per_kc = opps;
  p.seed = seed;
  return p;
}

inline iafm::Dataset small_dataset(int students, int kcs = 4, int opps = 10,
                                   std::uint64_t seed = 7) {
  return iafm::synth::generate(small_params(students, kcs, opps, seed)).dataset;
}

/// Owns the vectors a BlockData refers to.
struct Block {
  Eigen::VectorXd offset, t, y;

  explicit Block(const std::vector<std::array<double, 3>>& rows)
      : offset(rows.size()), t(rows.size()), y(rows.size()) {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto k = static_cast<Eigen::Index>(i);
      offset(k) = rows[i][0];
      t(k) = rows[i][1];
      y(k) = rows[i][2];
    }
  }
  iafm::glmm::BlockData data() const { return {offset, t, y}; }
};

/// Rows (offset, t_scaled, y) with a mix of outcomes.
inline std::vector<std::array<double, 3>> mixed_rows(int n, double offset = 0.4) {
  std::vector<std::array<double, 3>> rows;
  for (int i = 0; i < n; ++i)
    rows.push_back({offset + 0.1 * ((i * 7) % 5 - 2), 0.01 * i, (i % 3 == 0) ? 0.0 : 1.0});
  return rows;
}

}  // namespace fixtures
