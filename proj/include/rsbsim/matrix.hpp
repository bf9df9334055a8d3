#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "rsbsim/defenses.hpp"

namespace rsbsim {

struct MatrixCell {
  std::string attack;
  std::string defense;
  bool bypassed = false;
  std::uint64_t cycles = 0;
  std::uint64_t seed = 0;
};

struct MatrixReport {
  std::string preset;
  std::uint64_t seed = 0;
  std::string config_hash;  // over the preset's base machine config
  std::vector<std::string> attacks;
  std::vector<std::string> defenses;
  std::vector<MatrixCell> cells;  // row-major: attacks x defenses
  std::vector<std::string> footnotes;
};

// Table rows and single-defense columns, in presentation order.
const std::vector<std::string>& matrix_attacks();
const std::vector<std::pair<std::string, DefenseConfig>>& matrix_columns();

// Each cell runs its attack with exactly the column's defense enabled (the
// per-column reading of the table); jobs > 1 fans cells out over threads
// with a deterministic, order-independent assembly.
MatrixReport run_matrix(const std::string& preset, std::uint64_t seed, unsigned jobs);

std::string matrix_to_csv(const MatrixReport& r);
std::string matrix_to_text(const MatrixReport& r);

}  // namespace rsbsim
