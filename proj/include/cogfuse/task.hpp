#pragma once

#include <cstddef>
#include <string_view>

namespace cogfuse {

// Classification predicts control/MCI logits; regression predicts MMSE.
enum class TaskKind { classification, regression };

TaskKind parse_task(std::string_view name);  // "cls"/"classification", "reg"/"regression"
std::string_view to_string(TaskKind t);
std::size_t output_width(TaskKind t);

}  // namespace cogfuse
