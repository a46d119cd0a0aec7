// Error types for contract violations that callers are expected to handle.
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace smc {

/// Total reweighting mass fell below the representable floor; usually a
/// likelihood scaling bug in the model, not a numerical accident.
struct UnderflowError : std::runtime_error {
    explicit UnderflowError(long step_index)
        : std::runtime_error("total unnormalized weight underflowed at step " +
                             std::to_string(step_index)),
          step(step_index) {}
    long step;
};

/// Combined atom support exceeds what the exact distance LP will accept;
/// coarsen the inputs first.
struct SupportTooLarge : std::runtime_error {
    SupportTooLarge(std::size_t got, std::size_t limit)
        : std::runtime_error("distance support has " + std::to_string(got) +
                             " atoms, limit " + std::to_string(limit)),
          support_size(got) {}
    std::size_t support_size;
};

/// A sampled (x, y) pair falls outside the declared likelihood envelope.
struct EnvelopeViolation : std::runtime_error {
    EnvelopeViolation(const std::string& witness_desc)
        : std::runtime_error("likelihood envelope violated: " + witness_desc) {}
};

/// A sampled point violates one of the numbered observation-structure
/// requirements checked by the case-II verifier.
struct ItemViolation : std::runtime_error {
    ItemViolation(int item_index, const std::string& witness_desc)
        : std::runtime_error("requirement item " + std::to_string(item_index) +
                             " violated: " + witness_desc),
          item(item_index) {}
    int item;
};

/// Input sequences do not satisfy the recursion hypothesis of the bound
/// being verified.
struct HypothesisNotMet : std::runtime_error {
    explicit HypothesisNotMet(const std::string& what)
        : std::runtime_error(what) {}
};

/// A CSV file does not carry the header the consumer expects.
struct SchemaError : std::runtime_error {
    explicit SchemaError(const std::string& what) : std::runtime_error(what) {}
};

/// Experiment configuration failed validation; `field_path` names the
/// offending key, e.g. "model.a".
struct ConfigError : std::runtime_error {
    ConfigError(const std::string& path, const std::string& what)
        : std::runtime_error("config error at '" + path + "': " + what),
          field_path(path) {}
    std::string field_path;
};

} // namespace smc
