#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>

#include <json.hpp>

#include "d3kit/dense_blocks.hpp"
#include "d3kit/model_builder.hpp"
#include "d3kit/toy_task.hpp"

// JSON config files. Every parser throws ConfigError on missing or
// mistyped fields and on unknown keys.
//
// D2:  {"block": "d2", "L": 5, "k": 8, "kernel": 3 | [kh, kw],
//       "mode": "multi" | "standard" | "none", "in_channels": 1}
// D3:  {"block": "d3", "M": 2, "L": 3, "k": 4, "B": 16, "c": 0.5, ...}
//      "reduction" may replace "c": "none" | {"compress": c} | {"last": n}
// Backbone: {"preset": "d3net_s"} or
//      {"in_channels": 3, "mode": ..., "stem": [{"channels", "kernel", "stride"}],
//       "scales": [four D3 objects], "extract": [four ints],
//       "head": {"fusion_channels": n}}
// Toy: {"model": {"L", "k", "kernel", "mode"},
//       "task": {"n", "distance", "count", "period", "seed"},
//       "train": {"lr", "momentum", "epochs", "batch"}}
namespace d3kit {

nlohmann::json load_json(const std::string& path);

D2Config d2_from_json(const nlohmann::json& j);
D3Config d3_from_json(const nlohmann::json& j);
BackboneConfig backbone_from_json(const nlohmann::json& j);

nlohmann::ordered_json to_json(const D2Config& cfg);
nlohmann::ordered_json to_json(const D3Config& cfg);
nlohmann::ordered_json to_json(const BackboneConfig& cfg);

// A D2 or D3 block plus its input width, as read by analyze-rf.
struct BlockSpec {
  std::variant<D2Config, D3Config> block;
  std::size_t in_channels = 1;
};
BlockSpec block_from_json(const nlohmann::json& j);

struct ToyConfig {
  ToyModelConfig model;
  std::size_t length = 64;
  std::size_t distance = 20;
  std::size_t count = 256;
  std::size_t period = 13;
  std::uint64_t task_seed = 0;
  TrainOptions train;
};
ToyConfig toy_from_json(const nlohmann::json& j);

nlohmann::ordered_json to_json(const ParamReport& report);
std::string to_csv(const ParamReport& report);

}  // namespace d3kit
