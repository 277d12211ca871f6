#include "design_lab/schema.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "design_lab/errors.hpp"

namespace design_lab {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

std::string fmt_value(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

void check_continuous(const FeatureSchema& schema, std::size_t feature, double value) {
  if (feature >= schema.continuous_count()) {
    throw ValidationError("continuous feature index " + std::to_string(feature) + " out of range (schema has " +
                          std::to_string(schema.continuous_count()) + ")");
  }
  // Written so that NaN fails.
  if (!(value >= 0.0 && value <= 1.0)) {
    throw ValidationError("feature '" + schema.continuous()[feature].name + "': value " + fmt_value(value) +
                          " outside [0,1]");
  }
}

void check_discrete(const FeatureSchema& schema, std::size_t feature, std::size_t option) {
  if (feature >= schema.discrete_count()) {
    throw ValidationError("discrete feature index " + std::to_string(feature) + " out of range (schema has " +
                          std::to_string(schema.discrete_count()) + ")");
  }
  const auto& f = schema.discrete()[feature];
  if (option >= f.options.size()) {
    throw ValidationError("feature '" + f.name + "': option " + std::to_string(option) + " out of range (" +
                          std::to_string(f.options.size()) + " options)");
  }
}

}  // namespace

std::string_view to_string(Block block) {
  switch (block) {
    case Block::type:
      return "type";
    case Block::dimension:
      return "dimension";
    case Block::aesthetic:
      return "aesthetic";
  }
  return "unknown";
}

Block block_from_string(std::string_view name) {
  if (name == "type") return Block::type;
  if (name == "dimension") return Block::dimension;
  if (name == "aesthetic") return Block::aesthetic;
  throw ValidationError("unknown block '" + std::string(name) + "'");
}

FeatureSchema::FeatureSchema(std::vector<ContinuousFeature> continuous, std::vector<DiscreteFeature> discrete)
    : continuous_(std::move(continuous)), discrete_(std::move(discrete)) {
  std::set<std::string, std::less<>> names;
  for (auto& f : continuous_) {
    if (f.name.empty()) throw ValidationError("continuous feature with empty name");
    if (!names.insert(f.name).second) throw ValidationError("duplicate feature name '" + f.name + "'");
    if (!(f.default_value >= 0.0 && f.default_value <= 1.0)) {
      throw ValidationError("feature '" + f.name + "': default " + fmt_value(f.default_value) + " outside [0,1]");
    }
    if (f.control.empty()) f.control = f.name;
  }
  for (const auto& f : discrete_) {
    if (f.name.empty()) throw ValidationError("discrete feature with empty name");
    if (!names.insert(f.name).second) throw ValidationError("duplicate feature name '" + f.name + "'");
    if (f.options.size() < 2) throw ValidationError("feature '" + f.name + "': needs at least 2 options");
  }

  for (const auto& f : continuous_) {
    std::size_t idx = 0;
    while (idx < controls_.size() && controls_[idx] != f.control) ++idx;
    if (idx == controls_.size()) controls_.push_back(f.control);
    continuous_control_.push_back(idx);
  }
  discrete_control_base_ = controls_.size();
  for (const auto& f : discrete_) {
    for (const auto& c : controls_) {
      if (c == f.name) throw ValidationError("control '" + c + "' clashes with discrete feature name");
    }
    controls_.push_back(f.name);
  }
}

std::size_t FeatureSchema::option_count() const noexcept {
  std::size_t n = 0;
  for (const auto& f : discrete_) n += f.options.size();
  return n;
}

std::optional<std::size_t> FeatureSchema::find_continuous(std::string_view name) const {
  for (std::size_t i = 0; i < continuous_.size(); ++i) {
    if (continuous_[i].name == name) return i;
  }
  return std::nullopt;
}

std::optional<std::size_t> FeatureSchema::find_discrete(std::string_view name) const {
  for (std::size_t i = 0; i < discrete_.size(); ++i) {
    if (discrete_[i].name == name) return i;
  }
  return std::nullopt;
}

bool FeatureSchema::operator==(const FeatureSchema& other) const {
  if (continuous_.size() != other.continuous_.size() || discrete_.size() != other.discrete_.size()) return false;
  for (std::size_t i = 0; i < continuous_.size(); ++i) {
    const auto& a = continuous_[i];
    const auto& b = other.continuous_[i];
    if (a.name != b.name || a.block != b.block || a.control != b.control || a.default_value != b.default_value) {
      return false;
    }
  }
  for (std::size_t i = 0; i < discrete_.size(); ++i) {
    const auto& a = discrete_[i];
    const auto& b = other.discrete_[i];
    if (a.name != b.name || a.block != b.block || a.options != b.options) return false;
  }
  return true;
}

FeatureSchema default_chair_schema() {
  std::vector<DiscreteFeature> discrete = {
      {"arm_type", {"no_arm", "straight_arm", "curved_arm"}, Block::type},
      {"leg_type",
       {"no_leg", "four_leg", "tripod", "pedestal", "sled", "cantilever", "swivel", "rocker"},
       Block::type},
      {"material",
       {"no_material", "wood", "metal", "plastic", "fabric", "leather", "wicker", "glass", "velvet"},
       Block::aesthetic},
  };

  std::vector<ContinuousFeature> continuous;
  for (const char* name : {"body_width", "body_depth", "body_height", "seat_thickness", "backrest_angle",
                           "leg_length", "leg_thickness", "arm_height", "arm_thickness"}) {
    continuous.push_back({name, Block::dimension, name, 0.5});
  }
  // Neutral grey: zero saturation, mid value.
  for (const char* part : {"body_color", "leg_color", "arm_color"}) {
    const std::string control = part;
    continuous.push_back({control + "_hue", Block::aesthetic, control, 0.0});
    continuous.push_back({control + "_saturation", Block::aesthetic, control, 0.0});
    continuous.push_back({control + "_value", Block::aesthetic, control, 0.5});
  }
  return FeatureSchema(std::move(continuous), std::move(discrete));
}

DesignState initial_state(const FeatureSchema& schema) {
  DesignState s;
  s.continuous.reserve(schema.continuous_count());
  for (const auto& f : schema.continuous()) s.continuous.push_back(f.default_value);
  s.discrete.assign(schema.discrete_count(), 0);
  return s;
}

void validate_state(const FeatureSchema& schema, const DesignState& state) {
  if (state.continuous.size() != schema.continuous_count()) {
    throw ValidationError("state has " + std::to_string(state.continuous.size()) + " continuous values, schema has " +
                          std::to_string(schema.continuous_count()));
  }
  if (state.discrete.size() != schema.discrete_count()) {
    throw ValidationError("state has " + std::to_string(state.discrete.size()) + " discrete values, schema has " +
                          std::to_string(schema.discrete_count()));
  }
  for (std::size_t c = 0; c < state.continuous.size(); ++c) check_continuous(schema, c, state.continuous[c]);
  for (std::size_t d = 0; d < state.discrete.size(); ++d) check_discrete(schema, d, state.discrete[d]);
}

void validate_action(const FeatureSchema& schema, const Action& action) {
  std::visit(overloaded{[&](const SetContinuous& a) { check_continuous(schema, a.feature, a.value); },
                        [&](const SetDiscrete& a) { check_discrete(schema, a.feature, a.option); },
                        [](const Save&) {}, [](const Reset&) {}},
             action);
}

DesignState apply_action(const FeatureSchema& schema, const DesignState& state, const Action& action) {
  validate_action(schema, action);
  return std::visit(overloaded{[&](const SetContinuous& a) {
                                 DesignState next = state;
                                 next.continuous.at(a.feature) = a.value;
                                 return next;
                               },
                               [&](const SetDiscrete& a) {
                                 DesignState next = state;
                                 next.discrete.at(a.feature) = a.option;
                                 return next;
                               },
                               [&](const Save&) { return state; },
                               [&](const Reset&) { return initial_state(schema); }},
                    action);
}

std::vector<double> encode_design(const FeatureSchema& schema, const DesignState& state) {
  validate_state(schema, state);
  std::vector<double> out(state.continuous);
  out.reserve(schema.encoded_size());
  for (std::size_t d = 0; d < schema.discrete_count(); ++d) {
    const std::size_t n = schema.discrete()[d].options.size();
    for (std::size_t o = 0; o < n; ++o) out.push_back(o == state.discrete[d] ? 1.0 : 0.0);
  }
  return out;
}

DesignState decode_design(const FeatureSchema& schema, const std::vector<double>& encoded) {
  if (encoded.size() != schema.encoded_size()) {
    throw ValidationError("encoded design has length " + std::to_string(encoded.size()) + ", expected " +
                          std::to_string(schema.encoded_size()));
  }
  DesignState s;
  s.continuous.assign(encoded.begin(), encoded.begin() + static_cast<std::ptrdiff_t>(schema.continuous_count()));
  std::size_t pos = schema.continuous_count();
  for (const auto& f : schema.discrete()) {
    std::size_t hot = 0;
    std::size_t ones = 0;
    bool clean = true;
    for (std::size_t o = 0; o < f.options.size(); ++o) {
      const double v = encoded[pos + o];
      if (v == 1.0) {
        hot = o;
        ++ones;
      } else if (v != 0.0) {
        clean = false;
      }
    }
    if (!clean || ones != 1) throw ValidationError("feature '" + f.name + "': one-hot block is not a unit vector");
    s.discrete.push_back(hot);
    pos += f.options.size();
  }
  validate_state(schema, s);
  return s;
}

std::string describe(const FeatureSchema& schema, const Action& action) {
  return std::visit(
      overloaded{[&](const SetContinuous& a) {
                   return "set " + schema.continuous().at(a.feature).name + "=" + fmt_value(a.value);
                 },
                 [&](const SetDiscrete& a) {
                   const auto& f = schema.discrete().at(a.feature);
                   return "set " + f.name + "=" + f.options.at(a.option);
                 },
                 [](const Save&) { return std::string("save"); }, [](const Reset&) { return std::string("reset"); }},
      action);
}

nlohmann::json schema_to_json(const FeatureSchema& schema) {
  nlohmann::json cont = nlohmann::json::array();
  for (const auto& f : schema.continuous()) {
    cont.push_back({{"name", f.name},
                    {"block", std::string(to_string(f.block))},
                    {"control", f.control},
                    {"default", f.default_value}});
  }
  nlohmann::json disc = nlohmann::json::array();
  for (const auto& f : schema.discrete()) {
    disc.push_back({{"name", f.name}, {"block", std::string(to_string(f.block))}, {"options", f.options}});
  }
  return {{"continuous_features", cont}, {"discrete_features", disc}};
}

FeatureSchema schema_from_json(const nlohmann::json& j) {
  try {
    std::vector<ContinuousFeature> cont;
    for (const auto& f : j.at("continuous_features")) {
      ContinuousFeature cf;
      cf.name = f.at("name").get<std::string>();
      cf.block = block_from_string(f.at("block").get<std::string>());
      cf.control = f.value("control", cf.name);
      cf.default_value = f.value("default", 0.5);
      cont.push_back(std::move(cf));
    }
    std::vector<DiscreteFeature> disc;
    for (const auto& f : j.at("discrete_features")) {
      disc.push_back({f.at("name").get<std::string>(), f.at("options").get<std::vector<std::string>>(),
                      block_from_string(f.at("block").get<std::string>())});
    }
    return FeatureSchema(std::move(cont), std::move(disc));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed schema document: ") + e.what());
  }
}

FeatureSchema load_schema(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open schema file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("schema file '" + path + "': " + e.what());
  }
  return schema_from_json(j);
}

nlohmann::json state_to_json(const DesignState& state) {
  return {{"continuous", state.continuous}, {"discrete", state.discrete}};
}

DesignState state_from_json(const FeatureSchema& schema, const nlohmann::json& j) {
  DesignState s;
  try {
    s.continuous = j.at("continuous").get<std::vector<double>>();
    s.discrete = j.at("discrete").get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed state: ") + e.what());
  }
  validate_state(schema, s);
  return s;
}

nlohmann::json action_to_json(const FeatureSchema& schema, const Action& action) {
  return std::visit(overloaded{[&](const SetContinuous& a) -> nlohmann::json {
                                 return {{"type", "set_continuous"},
                                         {"feature", schema.continuous().at(a.feature).name},
                                         {"value", a.value}};
                               },
                               [&](const SetDiscrete& a) -> nlohmann::json {
                                 return {{"type", "set_discrete"},
                                         {"feature", schema.discrete().at(a.feature).name},
                                         {"option", a.option}};
                               },
                               [](const Save&) -> nlohmann::json { return {{"type", "save"}}; },
                               [](const Reset&) -> nlohmann::json { return {{"type", "reset"}}; }},
                    action);
}

Action action_from_json(const FeatureSchema& schema, const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("type") || !j["type"].is_string()) {
    throw ValidationError("action must be an object with a string 'type'");
  }
  const auto type = j["type"].get<std::string>();
  if (type == "save") return Save{};
  if (type == "reset") return Reset{};

  if (!j.contains("feature") || !j["feature"].is_string()) {
    throw ValidationError(type + " action needs a 'feature' name");
  }
  const auto name = j["feature"].get<std::string>();
  if (type == "set_continuous") {
    auto idx = schema.find_continuous(name);
    if (!idx) throw ValidationError("unknown continuous feature '" + name + "'");
    if (!j.contains("value") || !j["value"].is_number()) {
      throw ValidationError("feature '" + name + "': 'value' must be a number");
    }
    Action a = SetContinuous{*idx, j["value"].get<double>()};
    validate_action(schema, a);
    return a;
  }
  if (type == "set_discrete") {
    auto idx = schema.find_discrete(name);
    if (!idx) throw ValidationError("unknown discrete feature '" + name + "'");
    const auto& f = schema.discrete()[*idx];
    std::size_t option = 0;
    const auto& o = j.contains("option") ? j["option"] : nlohmann::json();
    if (o.is_number_unsigned()) {
      option = o.get<std::size_t>();
    } else if (o.is_string()) {
      const auto label = o.get<std::string>();
      std::size_t k = 0;
      while (k < f.options.size() && f.options[k] != label) ++k;
      if (k == f.options.size()) throw ValidationError("feature '" + name + "': unknown option '" + label + "'");
      option = k;
    } else {
      throw ValidationError("feature '" + name + "': 'option' must be a non-negative index or option name");
    }
    Action a = SetDiscrete{*idx, option};
    validate_action(schema, a);
    return a;
  }
  throw ValidationError("unknown action type '" + type + "'");
}

}  // namespace design_lab
