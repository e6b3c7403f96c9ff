#include <catch_amalgamated.hpp>

#include "ragtrace/text_metrics.hpp"

using namespace ragtrace;

namespace {

Tokens toks(std::string_view s) { return text::lowercase_words(s); }

/// Clipped n-gram precision by direct enumeration.
double precision_oracle(const Tokens& c, const Tokens& r, std::size_t n) {
  std::vector<Tokens> cg, rg;
  for (std::size_t i = 0; i + n <= c.size(); ++i) cg.emplace_back(c.begin() + i, c.begin() + i + n);
  for (std::size_t i = 0; i + n <= r.size(); ++i) rg.emplace_back(r.begin() + i, r.begin() + i + n);
  std::vector<bool> used(rg.size(), false);
  int matched = 0;
  for (const auto& g : cg) {
    for (std::size_t j = 0; j < rg.size(); ++j) {
      if (!used[j] && rg[j] == g) {
        used[j] = true;
        ++matched;
        break;
      }
    }
  }
  return static_cast<double>(matched) / static_cast<double>(cg.size());
}

}  // namespace

TEST_CASE("BLEU by hand", "[text_metrics]") {
  const auto c = toks("the cat sat on the mat");
  const auto r = toks("the cat sat on a mat");
  CHECK(precision_oracle(c, r, 1) == Catch::Approx(5.0 / 6.0));
  CHECK(precision_oracle(c, r, 2) == Catch::Approx(3.0 / 5.0));
  CHECK(precision_oracle(c, r, 3) == Catch::Approx(2.0 / 4.0));
  CHECK(precision_oracle(c, r, 4) == Catch::Approx(1.0 / 3.0));
  const double expected = std::pow(5.0 / 6.0 * 3.0 / 5.0 * 2.0 / 4.0 * 1.0 / 3.0, 0.25);
  CHECK(bleu(c, r) == Catch::Approx(expected));
}

TEST_CASE("BLEU brevity penalty", "[text_metrics]") {
  const auto c = toks("the cat sat");
  const auto r = toks("the cat sat on the mat");
  // All orders match fully; only the penalty exp(1 - 6/3) applies.
  CHECK(bleu(c, r) == Catch::Approx(std::exp(1.0 - 2.0)));
}

TEST_CASE("short candidate against a longer reference", "[text_metrics]") {
  const auto c = toks("the cat sat");
  const auto r = toks("the cat sat down");
  // Orders 1..3 match fully; no 4-grams in the candidate.
  const double b = std::exp(1.0 - 4.0 / 3.0);
  const double f = 2.0 * 1.0 * 0.75 / 1.75;
  CHECK(bleu(c, r) == Catch::Approx(b));
  CHECK(rouge_l_f1(c, r) == Catch::Approx(f));
  CHECK(correctness("the cat sat", "the cat sat down") == Catch::Approx(0.5 * b + 0.5 * f));
}

TEST_CASE("ROUGE-L by hand", "[text_metrics]") {
  const auto c = toks("the cat sat on the mat");
  const auto r = toks("the cat sat on a mat");
  CHECK(lcs_length(c, r) == 5);
  CHECK(rouge_l_f1(c, r) == Catch::Approx(5.0 / 6.0));
  const auto c2 = toks("a b c d");
  const auto r2 = toks("b d");
  // P = 2/4, R = 2/2.
  CHECK(rouge_l_f1(c2, r2) == Catch::Approx(2 * 0.5 * 1.0 / 1.5));
}

TEST_CASE("correctness combines BLEU and ROUGE-L", "[text_metrics]") {
  const double b = std::pow(5.0 / 6.0 * 3.0 / 5.0 * 2.0 / 4.0 * 1.0 / 3.0, 0.25);
  CHECK(correctness("The cat sat on the mat", "the cat sat on a mat") == Catch::Approx(0.5 * b + 0.5 * 5.0 / 6.0));
  CHECK(correctness("Spike", "Spike") == Catch::Approx(1.0));
  CHECK(correctness("Spike chased Tom", "spike chased tom") == Catch::Approx(1.0));
  CHECK(correctness("alpha beta", "gamma delta") == 0.0);
  CHECK(correctness("", "x") == 0.0);
  CHECK(correctness("x", "") == 0.0);
}
