#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "json.hpp"

namespace design_lab {

// Interface blocks the controls are grouped into.
enum class Block { type, dimension, aesthetic };

std::string_view to_string(Block block);
Block block_from_string(std::string_view name);

struct ContinuousFeature {
  std::string name;
  Block block = Block::dimension;
  // UI control this channel belongs to. Colour features expose three HSV
  // channels behind one control; everything else is its own control.
  std::string control;
  double default_value = 0.5;
};

struct DiscreteFeature {
  std::string name;
  // Option 0 is the "none" option.
  std::vector<std::string> options;
  Block block = Block::type;
};

// Declarative description of a design space. Immutable once constructed;
// the constructor enforces name uniqueness, option counts and defaults.
class FeatureSchema {
 public:
  FeatureSchema(std::vector<ContinuousFeature> continuous, std::vector<DiscreteFeature> discrete);

  const std::vector<ContinuousFeature>& continuous() const noexcept { return continuous_; }
  const std::vector<DiscreteFeature>& discrete() const noexcept { return discrete_; }

  std::size_t continuous_count() const noexcept { return continuous_.size(); }
  std::size_t discrete_count() const noexcept { return discrete_.size(); }
  std::size_t parameter_count() const noexcept { return continuous_.size() + discrete_.size(); }
  // Sum of option counts over discrete features.
  std::size_t option_count() const noexcept;
  // Length of encode_design output.
  std::size_t encoded_size() const noexcept { return continuous_.size() + option_count(); }

  std::optional<std::size_t> find_continuous(std::string_view name) const;
  std::optional<std::size_t> find_discrete(std::string_view name) const;

  // Distinct controls in interface order: continuous controls first (in
  // first-appearance order), then one per discrete feature.
  const std::vector<std::string>& controls() const noexcept { return controls_; }
  std::size_t control_of_continuous(std::size_t feature) const { return continuous_control_.at(feature); }
  std::size_t control_of_discrete(std::size_t feature) const { return discrete_control_base_ + feature; }

  bool operator==(const FeatureSchema& other) const;

 private:
  std::vector<ContinuousFeature> continuous_;
  std::vector<DiscreteFeature> discrete_;
  std::vector<std::string> controls_;
  std::vector<std::size_t> continuous_control_;
  std::size_t discrete_control_base_ = 0;
};

// One point of the design space (an MDP state).
struct DesignState {
  std::vector<double> continuous;
  std::vector<std::size_t> discrete;

  bool operator==(const DesignState&) const = default;
};

struct SetContinuous {
  std::size_t feature = 0;
  double value = 0.0;
  bool operator==(const SetContinuous&) const = default;
};

struct SetDiscrete {
  std::size_t feature = 0;
  std::size_t option = 0;
  bool operator==(const SetDiscrete&) const = default;
};

struct Save {
  bool operator==(const Save&) const = default;
};

struct Reset {
  bool operator==(const Reset&) const = default;
};

using Action = std::variant<SetContinuous, SetDiscrete, Save, Reset>;

// The 15-feature chair space: 3 dropdowns, 9 dimension sliders and three
// colours stored as HSV channel triples (18 continuous values).
FeatureSchema default_chair_schema();

DesignState initial_state(const FeatureSchema& schema);

void validate_state(const FeatureSchema& schema, const DesignState& state);
void validate_action(const FeatureSchema& schema, const Action& action);

// Deterministic transition. Save is the identity on the state.
DesignState apply_action(const FeatureSchema& schema, const DesignState& state, const Action& action);

// Continuous values followed by one one-hot block per discrete feature.
std::vector<double> encode_design(const FeatureSchema& schema, const DesignState& state);
DesignState decode_design(const FeatureSchema& schema, const std::vector<double>& encoded);

std::string describe(const FeatureSchema& schema, const Action& action);

// JSON forms. States are positional arrays in schema order; actions name
// their feature.
nlohmann::json schema_to_json(const FeatureSchema& schema);
FeatureSchema schema_from_json(const nlohmann::json& j);
FeatureSchema load_schema(const std::string& path);

nlohmann::json state_to_json(const DesignState& state);
DesignState state_from_json(const FeatureSchema& schema, const nlohmann::json& j);

nlohmann::json action_to_json(const FeatureSchema& schema, const Action& action);
Action action_from_json(const FeatureSchema& schema, const nlohmann::json& j);

}  // namespace design_lab
