#pragma once

// Synthetic training data. The copy task feeds `x SEP x` and scores only the
// copied half; the text task slices random windows out of a local file at
// byte level.

#include <cstdint>
#include <string>
#include <vector>

#include "seednorm/model.hpp"

namespace seednorm {

enum class TaskKind { copy, text };

std::string_view to_string(TaskKind kind);
TaskKind parse_task_kind(std::string_view name);

struct TaskSpec {
    TaskKind kind = TaskKind::copy;
    std::size_t batch = 8;
    /// Tokens per sequence (model inputs); must not exceed the context.
    std::size_t length = 16;
    /// Copy task: token 0 is the separator, symbols are 1..vocab-1.
    std::size_t vocab = 16;
    /// Text task: bytes of this file, vocab 256.
    std::string text_path;
};

/// Token 0 separates the two halves of a copy sequence.
inline constexpr std::uint32_t kSeparatorToken = 0;

/// Deterministic batch source. Each call to next() draws from `rng`.
class BatchSource {
public:
    /// Validates the spec; the text task loads its file here.
    explicit BatchSource(TaskSpec spec);

    const TaskSpec& spec() const noexcept { return spec_; }
    std::size_t vocab() const noexcept;
    Batch next(Rng& rng) const;

private:
    TaskSpec spec_;
    std::vector<std::uint8_t> text_;
};

}  // namespace seednorm
