#include "seednorm/task.hpp"

#include <fstream>
#include <iterator>
#include <stdexcept>

namespace seednorm {

std::string_view to_string(TaskKind kind) {
    switch (kind) {
        case TaskKind::copy: return "copy";
        case TaskKind::text: return "text";
    }
    return "unknown";
}

TaskKind parse_task_kind(std::string_view name) {
    if (name == "copy") return TaskKind::copy;
    if (name == "text") return TaskKind::text;
    throw std::invalid_argument("unknown task: " + std::string(name));
}

BatchSource::BatchSource(TaskSpec spec) : spec_(std::move(spec)) {
    if (spec_.batch == 0) throw std::invalid_argument("task: batch must be >= 1");
    if (spec_.kind == TaskKind::copy) {
        if (spec_.length < 2 || spec_.length % 2 != 0) {
            throw std::invalid_argument("copy task: length must be even and >= 2");
        }
        if (spec_.vocab < 2) throw std::invalid_argument("copy task: vocab must be >= 2");
        return;
    }
    if (spec_.length == 0) throw std::invalid_argument("text task: length must be >= 1");
    std::ifstream in(spec_.text_path, std::ios::binary);
    if (!in) throw std::invalid_argument("text task: cannot open " + spec_.text_path);
    text_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    if (text_.size() < spec_.length + 1) {
        throw std::invalid_argument("text task: file shorter than length + 1 bytes");
    }
}

std::size_t BatchSource::vocab() const noexcept {
    return spec_.kind == TaskKind::copy ? spec_.vocab : 256;
}

Batch BatchSource::next(Rng& rng) const {
    const std::size_t len = spec_.length;
    Batch b;
    b.batch = spec_.batch;
    b.length = len;
    b.inputs.resize(b.batch * len);
    b.targets.resize(b.batch * len);
    b.loss_mask.assign(b.batch * len, 0);
    std::vector<std::uint32_t> seq(len + 1);
    for (std::size_t s = 0; s < b.batch; ++s) {
        if (spec_.kind == TaskKind::copy) {
            const std::size_t half = len / 2;
            for (std::size_t k = 0; k < half; ++k) {
                seq[k] = 1 + static_cast<std::uint32_t>(rng.next_u64() % (spec_.vocab - 1));
                seq[half + 1 + k] = seq[k];
            }
            seq[half] = kSeparatorToken;
        } else {
            const std::uint64_t start = rng.next_u64() % (text_.size() - len);
            for (std::size_t k = 0; k <= len; ++k) seq[k] = text_[start + k];
        }
        for (std::size_t i = 0; i < len; ++i) {
            b.inputs[s * len + i] = seq[i];
            b.targets[s * len + i] = seq[i + 1];
            const bool scored = spec_.kind == TaskKind::text || i >= len / 2;
            b.loss_mask[s * len + i] = scored ? 1 : 0;
        }
    }
    return b;
}

}  // namespace seednorm
