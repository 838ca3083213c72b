#include "priorforest/formula.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>

#include "priorforest/error.hpp"

namespace priorforest {

std::string_view to_string(LatentKind kind) {
  switch (kind) {
    case LatentKind::iid: return "iid";
    case LatentKind::rw1: return "rw1";
    case LatentKind::rw2: return "rw2";
    case LatentKind::besag: return "besag";
    case LatentKind::generic0: return "generic0";
  }
  return "iid";
}

std::string_view to_string(Likelihood lik) {
  switch (lik) {
    case Likelihood::gaussian: return "gaussian";
    case Likelihood::binomial: return "binomial";
    case Likelihood::poisson: return "poisson";
  }
  return "gaussian";
}

LatentKind parse_latent_kind(std::string_view name) {
  if (name == "iid") return LatentKind::iid;
  if (name == "rw1") return LatentKind::rw1;
  if (name == "rw2") return LatentKind::rw2;
  if (name == "besag") return LatentKind::besag;
  if (name == "generic0") return LatentKind::generic0;
  throw Error(ErrorCode::unknown_model, "unknown latent model \"" + std::string(name) + "\"");
}

Likelihood parse_likelihood(std::string_view name) {
  if (name == "gaussian") return Likelihood::gaussian;
  if (name == "binomial") return Likelihood::binomial;
  if (name == "poisson") return Likelihood::poisson;
  throw Error(ErrorCode::invalid_formula, "unknown likelihood family \"" + std::string(name) + "\"");
}

std::vector<std::string> ModelSpec::effect_labels() const {
  std::vector<std::string> labels;
  labels.reserve(components.size() + 1);
  for (const auto& c : components) labels.push_back(c.label);
  if (has_residual()) labels.emplace_back(kResidualLabel);
  return labels;
}

int ModelSpec::canonical_rank(std::string_view label) const {
  for (size_t i = 0; i < components.size(); ++i) {
    if (components[i].label == label) return static_cast<int>(i);
  }
  return static_cast<int>(components.size());
}

const ComponentDecl* ModelSpec::find_component(std::string_view label) const {
  for (const auto& c : components) {
    if (c.label == label) return &c;
  }
  return nullptr;
}

namespace {

enum class Tok { ident, number, string, tilde, plus, minus, lparen, rparen, comma, equals, end };

struct Token {
  Tok kind;
  std::string text;
  size_t pos;
};

std::vector<Token> tokenize(std::string_view s) {
  std::vector<Token> out;
  size_t i = 0;
  while (i < s.size()) {
    const char c = s[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    const size_t start = i;
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_' || c == '.') {
      while (i < s.size() && (std::isalnum(static_cast<unsigned char>(s[i])) || s[i] == '_' || s[i] == '.')) ++i;
      out.push_back({Tok::ident, std::string(s.substr(start, i - start)), start});
    } else if (std::isdigit(static_cast<unsigned char>(c))) {
      while (i < s.size() && (std::isdigit(static_cast<unsigned char>(s[i])) || s[i] == '.' || s[i] == 'e' ||
                              s[i] == 'E'))
        ++i;
      out.push_back({Tok::number, std::string(s.substr(start, i - start)), start});
    } else if (c == '"' || c == '\'') {
      ++i;
      while (i < s.size() && s[i] != c) ++i;
      if (i >= s.size()) throw Error(ErrorCode::parse_error, "unterminated string in formula");
      out.push_back({Tok::string, std::string(s.substr(start + 1, i - start - 1)), start});
      ++i;
    } else {
      Tok k;
      switch (c) {
        case '~': k = Tok::tilde; break;
        case '+': k = Tok::plus; break;
        case '-': k = Tok::minus; break;
        case '(': k = Tok::lparen; break;
        case ')': k = Tok::rparen; break;
        case ',': k = Tok::comma; break;
        case '=': k = Tok::equals; break;
        default:
          throw Error(ErrorCode::parse_error,
                      "unexpected character '" + std::string(1, c) + "' at position " + std::to_string(i));
      }
      out.push_back({k, std::string(1, c), start});
      ++i;
    }
  }
  out.push_back({Tok::end, "", s.size()});
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "TRUE" || value == "T" || value == "true") return true;
  if (value == "FALSE" || value == "F" || value == "false") return false;
  throw Error(ErrorCode::invalid_formula, "option " + key + " expects TRUE or FALSE, got \"" + value + "\"");
}

class FormulaParser {
 public:
  explicit FormulaParser(std::string_view text) : toks_(tokenize(text)) {}

  ModelSpec parse() {
    ModelSpec spec;
    spec.response = expect(Tok::ident, "response name").text;
    expect(Tok::tilde, "'~'");
    parse_term(spec, true);
    while (!at(Tok::end)) {
      if (accept(Tok::plus)) {
        parse_term(spec, false);
      } else if (accept(Tok::minus)) {
        const auto& t = expect(Tok::number, "1 after '-'");
        if (t.text != "1") fail("only '-1' may be subtracted", t.pos);
        spec.has_intercept = false;
      } else {
        fail("expected '+' between terms", peek().pos);
      }
    }
    return spec;
  }

 private:
  const Token& peek() const { return toks_[pos_]; }
  bool at(Tok k) const { return peek().kind == k; }
  bool accept(Tok k) {
    if (!at(k)) return false;
    ++pos_;
    return true;
  }
  const Token& expect(Tok k, const char* what) {
    if (!at(k)) fail(std::string("expected ") + what, peek().pos);
    return toks_[pos_++];
  }
  [[noreturn]] void fail(const std::string& msg, size_t at) const {
    throw Error(ErrorCode::invalid_formula, "malformed formula: " + msg + " at position " + std::to_string(at));
  }

  void parse_term(ModelSpec& spec, bool first) {
    if (accept(Tok::minus)) {
      const auto& t = expect(Tok::number, "1 after '-'");
      if (t.text != "1") fail("only '-1' may be subtracted", t.pos);
      spec.has_intercept = false;
      return;
    }
    if (at(Tok::number)) {
      const auto& t = toks_[pos_++];
      if (t.text == "1") return;
      if (t.text == "0") {
        spec.has_intercept = false;
        return;
      }
      fail("unexpected number", t.pos);
    }
    (void)first;
    const auto& name = expect(Tok::ident, "covariate or mc(...) term");
    if (name.text == "mc" && at(Tok::lparen)) {
      parse_mc(spec);
      return;
    }
    if (at(Tok::lparen)) fail("function terms other than mc() are not supported", peek().pos);
    spec.covariates.push_back(name.text);
  }

  void parse_mc(ModelSpec& spec) {
    expect(Tok::lparen, "'('");
    ComponentDecl decl;
    decl.label = expect(Tok::ident, "component label").text;
    bool constr_set = false;
    bool scale_set = false;
    while (accept(Tok::comma)) {
      const auto key = expect(Tok::ident, "option name").text;
      expect(Tok::equals, "'='");
      std::string value;
      if (at(Tok::ident) || at(Tok::number)) {
        value = toks_[pos_++].text;
        decl.options.emplace_back(key, value);
      } else if (at(Tok::string)) {
        value = toks_[pos_++].text;
        decl.options.emplace_back(key, "\"" + value + "\"");
      } else {
        fail("expected option value", peek().pos);
      }
      if (key == "model") {
        decl.kind = parse_latent_kind(value);
      } else if (key == "Cmatrix") {
        decl.cmatrix = value;
      } else if (key == "graph") {
        decl.graph = value;
      } else if (key == "constr") {
        decl.constr = parse_bool(key, value);
        constr_set = true;
      } else if (key == "lin_constr") {
        decl.lin_constr = parse_bool(key, value);
      } else if (key == "scale.model") {
        decl.scale_model = parse_bool(key, value);
        scale_set = true;
      } else {
        throw Error(ErrorCode::invalid_formula, "unknown mc() option \"" + key + "\"");
      }
    }
    expect(Tok::rparen, "')'");
    const bool intrinsic =
        decl.kind == LatentKind::rw1 || decl.kind == LatentKind::rw2 || decl.kind == LatentKind::besag;
    if (!constr_set) decl.constr = intrinsic;
    if (!scale_set) decl.scale_model = intrinsic;
    if (decl.lin_constr && decl.kind != LatentKind::rw2) {
      throw Error(ErrorCode::invalid_formula, "lin_constr is only available for rw2 (component " + decl.label + ")");
    }
    spec.components.push_back(std::move(decl));
  }

  std::vector<Token> toks_;
  size_t pos_ = 0;
};

}  // namespace

ModelSpec parse_formula(std::string_view text, Likelihood likelihood) {
  ModelSpec spec = FormulaParser(text).parse();
  spec.likelihood = likelihood;
  spec.formula_text = render_formula(spec);

  std::set<std::string> seen;
  for (const auto& c : spec.components) {
    if (c.label == kResidualLabel) {
      throw Error(ErrorCode::reserved_label, "the label \"eps\" is reserved for the residual effect");
    }
    if (!seen.insert(c.label).second) {
      throw Error(ErrorCode::duplicate_label, "component label \"" + c.label + "\" used more than once");
    }
    if (c.kind == LatentKind::generic0 && c.cmatrix.empty()) {
      throw Error(ErrorCode::invalid_formula, "generic0 component " + c.label + " requires Cmatrix");
    }
    if (c.kind == LatentKind::besag && c.graph.empty()) {
      throw Error(ErrorCode::invalid_formula, "besag component " + c.label + " requires graph");
    }
  }
  for (const auto& cov : spec.covariates) {
    if (cov == kResidualLabel || seen.count(cov) || cov == spec.response) {
      throw Error(ErrorCode::duplicate_label, "covariate \"" + cov + "\" clashes with another name");
    }
    seen.insert(cov);
  }
  if (spec.components.empty() && spec.likelihood != Likelihood::gaussian) {
    throw Error(ErrorCode::invalid_formula, "formula has no random effects");
  }
  return spec;
}

std::string render_formula(const ModelSpec& spec) {
  std::ostringstream os;
  os << spec.response << " ~ ";
  bool first = true;
  auto sep = [&] {
    if (!first) os << " + ";
    first = false;
  };
  if (!spec.has_intercept) {
    sep();
    os << "-1";
  }
  for (const auto& c : spec.covariates) {
    sep();
    os << c;
  }
  for (const auto& c : spec.components) {
    sep();
    os << "mc(" << c.label;
    for (const auto& [k, v] : c.options) os << ", " << k << " = " << v;
    os << ")";
  }
  return os.str();
}

}  // namespace priorforest
