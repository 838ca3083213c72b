#include "helpers.hpp"

using namespace pft;

TEST_SUITE("dsl") {
  TEST_CASE("formula with covariate and two iid components") {
    const ModelSpec s = parse_formula("y ~ x + mc(a) + mc(b)");
    CHECK(s.response == "y");
    CHECK(s.has_intercept);
    REQUIRE(s.covariates.size() == 1);
    CHECK(s.covariates[0] == "x");
    REQUIRE(s.components.size() == 2);
    CHECK(s.components[0].label == "a");
    CHECK(s.components[1].kind == LatentKind::iid);
    CHECK(s.effect_labels() == std::vector<std::string>{"a", "b", "eps"});
  }

  TEST_CASE("formula without intercept") {
    const ModelSpec s = parse_formula("y ~ -1 + mc(a)");
    CHECK_FALSE(s.has_intercept);
    CHECK(s.components.size() == 1);
  }

  TEST_CASE("formula options") {
    const ModelSpec s = parse_formula("y ~ lin + mc(rw2, model = \"rw2\", constr = TRUE, lin_constr = TRUE)");
    CHECK(s.components[0].kind == LatentKind::rw2);
    CHECK(s.components[0].constr);
    CHECK(s.components[0].lin_constr);
    const ModelSpec b = parse_formula("y ~ mc(u, model = \"besag\", graph = g, scale.model = TRUE)", Likelihood::binomial);
    CHECK(b.components[0].graph == "g");
    CHECK(b.components[0].scale_model);
    CHECK(b.effect_labels() == std::vector<std::string>{"u"});
  }

  TEST_CASE("formula errors") {
    CHECK(code_of([] { parse_formula("y ~ mc(eps)"); }) == "reserved_label");
    CHECK(code_of([] { parse_formula("y ~ mc(a) + mc(a)"); }) == "duplicate_label");
    CHECK(code_of([] { parse_formula("y ~ mc(a, model = \"ar7\")"); }) == "unknown_model");
    CHECK(parse_formula("y ~ x").effect_labels() == std::vector<std::string>{"eps"});
    CHECK(code_of([] { parse_formula("y ~ mc(a) + "); }) != "none");
    CHECK(code_of([] { parse_formula("y  mc(a)"); }) != "none");
  }

  TEST_CASE("tree string renames splits canonically") {
    const ModelSpec s = parse_formula("y ~ x + mc(a) + mc(b)");
    const PriorForest f = parse_tree_string("s1 = (a, b); s2 = (s1, eps)", s);
    CHECK(f.roots.size() == 1);
    CHECK(render_tree_string(f) == "a_b = (a,b); eps_a_b = (eps,a_b)");
    CHECK(f.find("s2") == f.find("eps_a_b"));
    CHECK(f.node(f.find("s2")).alias == "s2");
  }

  TEST_CASE("singletons") {
    const ModelSpec s = parse_formula("y ~ x + mc(a) + mc(b)");
    const PriorForest f = parse_tree_string("(a); (b); (eps)", s);
    CHECK(f.roots.size() == 3);
    CHECK(f.splits_post_order().empty());
    CHECK(render_tree_string(f) == "(a); (b); (eps)");
  }

  TEST_CASE("canonical order follows the formula with eps last") {
    const ModelSpec s = parse_formula("y ~ mc(a) + mc(d) + mc(x)");
    const PriorForest f = parse_tree_string("s1 = (d, x); s2 = (a, s1); s3 = (s2, eps)", s);
    CHECK(render_tree_string(f) == "d_x = (d,x); a_d_x = (a,d_x); eps_a_d_x = (eps,a_d_x)");
    const ModelSpec n = parse_formula("y ~ urban + mc(nu) + mc(v) + mc(u)", Likelihood::binomial);
    CHECK(render_tree_string(parse_tree_string("s1 = (u, v); s2 = (s1, nu)", n)) == "v_u = (v,u); nu_v_u = (nu,v_u)");
  }

  TEST_CASE("canonicalize is idempotent") {
    const ModelSpec s = parse_formula("y ~ x + mc(a) + mc(b)");
    const PriorForest f = parse_tree_string("s2 = (eps, s1); s1 = (b, a)", s);
    const PriorForest g = canonicalize(f, s);
    CHECK(g.same_structure(f));
    CHECK(render_tree_string(g) == render_tree_string(f));
    CHECK(render_tree_string(parse_tree_string(render_tree_string(f), s)) == render_tree_string(f));
  }

  TEST_CASE("tree string errors") {
    const ModelSpec s = parse_formula("y ~ x + mc(a) + mc(b)");
    CHECK(code_of([&] { parse_tree_string("s1 = (a, c)", s); }) == "unknown_name");
    CHECK(code_of([&] { parse_tree_string("s1 = (a, a); (b); (eps)", s); }) == "duplicate_use");
    CHECK(code_of([&] { parse_tree_string("s1 = (a, b)", s); }) == "missing_component");
    CHECK(code_of([&] { parse_tree_string("s1 = (a); (b); (eps)", s); }) == "invalid_tree");
    CHECK(code_of([&] { parse_tree_string("s1 = (a, b; (eps)", s); }) == "parse_error");
    CHECK(code_of([&] { parse_tree_string("y = (a, b); (eps)", s, {"y"}); }) != "none");
  }

  TEST_CASE("empty forest renders empty") { CHECK(render_tree_string(PriorForest{}).empty()); }

  TEST_CASE("default forest is one split over everything") {
    const ModelSpec s = parse_formula("y ~ x + mc(a) + mc(b)");
    const PriorForest f = default_forest(s);
    REQUIRE(f.roots.size() == 1);
    CHECK(f.node(f.roots[0]).children.size() == 3);
    CHECK(f.leaves_under(f.roots[0]) == std::vector<std::string>{"a", "b", "eps"});
  }
}
