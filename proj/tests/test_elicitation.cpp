#include <cmath>

#include "helpers.hpp"

using namespace pft;

namespace {

GuideAnswer pick(const std::string& c) { return {c, {}, ""}; }
GuideAnswer nums(std::vector<double> v) { return {"", std::move(v), ""}; }

}  // namespace

TEST_SUITE("elicitation") {
  TEST_CASE("default priors by role and likelihood") {
    CHECK(default_prior_for(NodeRole::split, Likelihood::gaussian, true).w->variant == WeightVariant::dirichlet);
    CHECK(default_prior_for(NodeRole::top, Likelihood::gaussian, true).V->variant == VarianceVariant::jeffreys);
    CHECK(*default_prior_for(NodeRole::top, Likelihood::gaussian, false).V == VarianceChoice{VarianceVariant::pc0, 3, 0.05});
    CHECK(*default_prior_for(NodeRole::singleton, Likelihood::gaussian, false).V ==
          VarianceChoice{VarianceVariant::pc0, 3, 0.05});
    CHECK(*default_prior_for(NodeRole::top, Likelihood::binomial, true).V == VarianceChoice{VarianceVariant::pc0, 1.6, 0.05});
    CHECK(*default_prior_for(NodeRole::top, Likelihood::poisson, true).V == VarianceChoice{VarianceVariant::pc0, 1.6, 0.05});
  }

  TEST_CASE("PC parameter from an interval") {
    const PcParamResult r = find_pc_prior_param(0.1, 10, 0.9, 200000, 1);
    CHECK(r.U > 3.30);
    CHECK(r.U < 3.40);
    CHECK(r.coverage == doctest::Approx(0.9).epsilon(0.005));
    CHECK(r.q_lower < 0.1 * 1.05);
    CHECK(r.q_upper > 10 / 1.05);
    // Same seed, same answer.
    CHECK(find_pc_prior_param(0.1, 10, 0.9, 200000, 1).U == r.U);
  }

  TEST_CASE("PC parameter errors") {
    CHECK(code_of([] { find_pc_prior_param(0.99, 1.01, 0.99999, 20000, 1); }) == "unattainable");
    CHECK(code_of([] { find_pc_prior_param(2, 1, 0.5, 1000, 1); }) != "none");
    CHECK(code_of([] { find_pc_prior_param(0.1, 10, 1.5, 1000, 1); }) != "none");
  }

  TEST_CASE("guided walk reproduces Model 1") {
    const ModelSpec s = parse_formula("y ~ x + mc(a) + mc(b)");
    GuideState g = guide_start(s, {});
    CHECK(guide_question(g).id == "guide.tree");
    GuideStep st = guide_next(g, {"tree", {}, "s1 = (a, b); s2 = (s1, eps)"});
    CHECK(st.question.id == "split.knowledge");
    CHECK(st.question.text.find("a_b") != std::string::npos);
    guide_next(g, pick("yes"));
    guide_next(g, pick("none"));
    guide_next(g, nums({0.7}));
    st = guide_next(g, nums({0.5}));
    CHECK(st.question.text.find("eps_a_b") != std::string::npos);
    guide_next(g, pick("yes"));
    guide_next(g, pick("second"));
    st = guide_next(g, nums({0.75}));
    CHECK(st.question.id == "root.knowledge");
    guide_next(g, pick("yes"));
    st = guide_next(g, pick("pc"));
    CHECK(st.question.fields == std::vector<std::string>{"U", "alpha"});
    st = guide_next(g, nums({3, 0.05}));
    REQUIRE(st.finished);
    CHECK(st.choices.tree == "a_b = (a,b); eps_a_b = (eps,a_b)");
    CHECK(st.choices.w.at("a_b") == WeightChoice{WeightVariant::pcM, 0.7, 0.5});
    CHECK(st.choices.w.at("eps_a_b") == WeightChoice{WeightVariant::pc1, 0.75, 0.5});
    CHECK(st.choices.V.at("eps_a_b") == VarianceChoice{VarianceVariant::pc0, 3, 0.05});
    const HDJointPrior p = assemble(s, st.choices, nullptr, {0, 1000}, {{"x", {0, 100}}});
    const std::string text = prior_block_text(p);
    CHECK(text.find("w[a/a_b] ~ PCM(0.7, 0.5)") != std::string::npos);
    CHECK(text.find("w[eps/eps_a_b] ~ PC1(0.75)") != std::string::npos);
    CHECK(text.find("sqrt(V)[eps_a_b] ~ PC0(3, 0.05)") != std::string::npos);
    CHECK(code_of([&] { guide_next(g, pick("yes")); }) == "invalid_answer");
  }

  TEST_CASE("guide without knowledge gives defaults") {
    const ModelSpec s = parse_formula("y ~ mc(a) + mc(b)");
    GuideState g = guide_start(s, parse_tree_string("s1 = (a, b); s2 = (s1, eps)", s));
    guide_next(g, pick("keep"));
    guide_next(g, pick("no"));
    guide_next(g, pick("no"));
    const GuideStep st = guide_next(g, pick("no"));
    REQUIRE(st.finished);
    CHECK(st.choices.w.at("a_b").variant == WeightVariant::dirichlet);
    CHECK(st.choices.V.at("eps_a_b").variant == VarianceVariant::jeffreys);
  }

  TEST_CASE("multi-splits are skipped with a Dirichlet prior") {
    const ModelSpec s = parse_formula("y ~ mc(a) + mc(b)");
    GuideState g = guide_start(s, {});
    const GuideStep st = guide_next(g, pick("keep"));
    CHECK(st.question.id == "root.knowledge");
    CHECK(guide_choices(g).w.size() == 1);
  }

  TEST_CASE("interval answers use the PC parameter search") {
    const ModelSpec s = parse_formula("y ~ mc(a)", Likelihood::binomial);
    GuideState g = guide_start(s, parse_tree_string("(a)", s));
    guide_next(g, pick("keep"));
    guide_next(g, pick("yes"));
    guide_next(g, pick("interval"));
    const GuideStep st = guide_next(g, nums({0.1, 10, 0.9}));
    REQUIRE(st.finished);
    CHECK(st.choices.V.at("a").p1 == doctest::Approx(3.35).epsilon(0.02));
  }

  TEST_CASE("bad answers") {
    const ModelSpec s = parse_formula("y ~ mc(a) + mc(b)");
    GuideState g = guide_start(s, parse_tree_string("s1 = (a, b); s2 = (s1, eps)", s));
    CHECK(code_of([&] { guide_next(g, pick("maybe")); }) == "invalid_answer");
    guide_next(g, pick("keep"));
    CHECK(code_of([&] { guide_next(g, pick("perhaps")); }) == "invalid_answer");
    guide_next(g, pick("yes"));
    guide_next(g, pick("none"));
    CHECK(code_of([&] { guide_next(g, nums({1.5})); }) == "invalid_answer");
    CHECK(code_of([&] { guide_next(g, nums({0.5, 0.5})); }) == "invalid_answer");
    CHECK(code_of([&] { guide_next(g, {"tree", {}, "s1 = (a)"}); }) == "invalid_answer");
  }
}
