#include <gtest/gtest.h>

#include "properties.hpp"

using namespace qpst;

namespace {

void expect_suite(const props::SuiteResult& r) {
  EXPECT_GE(r.cases, props::kDraws / 10) << r.name;
  EXPECT_LE(r.worst, r.tol) << r.name << ": worst violation " << r.worst << " over " << r.cases << " cases";
}

}  // namespace

TEST(Invariants, TracePreservation) { expect_suite(props::trace_preservation()); }
TEST(Invariants, Contractivity) { expect_suite(props::contractivity()); }
TEST(Invariants, Semigroup) { expect_suite(props::semigroup()); }
TEST(Invariants, ExpmMatchesSpectral) { expect_suite(props::expm_vs_spectral()); }
TEST(Invariants, ClosedFormMatchesGeneralOverlap) { expect_suite(props::closed_form_vs_general()); }

TEST(Invariants, SuitesDrawFullSample) {
  EXPECT_EQ(props::trace_preservation().cases, props::kDraws);
  EXPECT_EQ(props::expm_vs_spectral().cases, props::kDraws);
}

TEST(LongChainInvariants, FiftySites) {
  for (const auto& r : props::long_chain_suites(50)) expect_suite(r);
}

TEST(LongChainInvariants, HundredSites) {
  for (const auto& r : props::long_chain_suites(100)) expect_suite(r);
}
