#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <array>
#include <map>
#include <string>

#include "rsbsim/matrix.hpp"

using namespace rsbsim;

namespace {

// Defense-bypass table, row-major over matrix_attacks() x matrix_columns():
// 1 = the attack still succeeds with (only) that defense enabled.
const std::map<std::string, std::array<int, 7>> kExpected = {
    //            lfence ibrs stibp ibpb retp refill smep/smap
    {"attack1", {1, 1, 1, 1, 1, 1, 1}},
    {"attack2a", {1, 1, 1, 1, 1, 0, 1}},
    {"attack2b", {1, 1, 1, 1, 1, 0, 0}},
    {"attack2c", {1, 1, 1, 1, 1, 0, 1}},
    {"attack3", {1, 1, 1, 1, 1, 1, 1}},
    {"attack4", {1, 1, 1, 1, 1, 0, 0}},
};

}  // namespace

TEST_CASE("the xeon matrix reproduces all 42 expected cells") {
  MatrixReport rep = run_matrix("xeon", 0, 4);
  REQUIRE(rep.attacks.size() == 6);
  REQUIRE(rep.defenses.size() == 7);
  REQUIRE(rep.cells.size() == 42);
  for (std::size_t row = 0; row < rep.attacks.size(); row++) {
    const auto& want = kExpected.at(rep.attacks[row]);
    for (std::size_t col = 0; col < rep.defenses.size(); col++) {
      const MatrixCell& cell = rep.cells[row * rep.defenses.size() + col];
      CHECK_MESSAGE(cell.bypassed == (want[col] == 1), cell.attack << " vs " << cell.defense);
    }
  }
}

TEST_CASE("csv is byte-stable and independent of the job count") {
  std::string first = matrix_to_csv(run_matrix("xeon", 0, 1));
  for (unsigned jobs : {1u, 2u, 8u}) {
    CHECK(matrix_to_csv(run_matrix("xeon", 0, jobs)) == first);
  }
  CHECK(first.substr(0, first.find('\n')) == "attack,defense,outcome,cycles,seed");
  // 42 cells + header + trailing newline
  CHECK(std::count(first.begin(), first.end(), '\n') == 43);
}

TEST_CASE("report metadata identifies the run") {
  MatrixReport a = run_matrix("xeon", 0, 2);
  MatrixReport b = run_matrix("skylake", 0, 2);
  CHECK(a.preset == "xeon");
  CHECK(a.config_hash != b.config_hash);
  CHECK(!a.footnotes.empty());
  std::string text = matrix_to_text(a);
  CHECK(text.find("attack2b") != std::string::npos);
  CHECK(text.find(a.config_hash) != std::string::npos);
}

TEST_CASE("seeds flow into the cells") {
  MatrixReport rep = run_matrix("xeon", 7, 2);
  for (const MatrixCell& c : rep.cells) CHECK(c.seed == 7);
}
