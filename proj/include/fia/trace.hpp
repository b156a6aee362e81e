#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

// Activation-trace data model and the FIAT binary container. A trace holds,
// per linear layer, the weight matrix plus the layer's input activations for
// every (timestep, prompt group, prompt) combination. Payloads are stored as
// 32-bit floats; downstream math widens to double after load.

namespace fia::trace {

enum class TargetKind : std::uint8_t { Ffn1 = 0, Ffn2 = 1, AttnK = 2, AttnV = 3, Other = 4 };

enum class GroupKind : std::uint8_t { Concept = 0, Base = 1 };

const char* target_kind_name(TargetKind kind);
std::optional<TargetKind> target_kind_from_name(std::string_view name);

struct LayerSpec {
    std::string layer_id;
    std::uint32_t c_in = 0;
    std::uint32_t c_out = 0;
    TargetKind target_kind = TargetKind::Other;
};

struct PromptGroup {
    std::string group_id;
    GroupKind kind = GroupKind::Concept;
    std::string concept_id;  // empty iff kind == Base
    std::uint32_t prompt_count = 0;
};

struct RecordKey {
    std::uint32_t layer_index = 0;
    std::uint32_t timestep = 0;  // 1-based, within [1, total_timesteps]
    std::uint32_t group_index = 0;
    std::uint32_t prompt_index = 0;

    friend auto operator<=>(const RecordKey&, const RecordKey&) = default;
};

struct ActivationRecord {
    RecordKey key;
    std::vector<float> activations;  // N × c_in, row-major
};

enum class TraceErrorKind {
    BadMagic,
    BadVersion,
    Truncated,
    ShapeMismatch,
    NonFinite,
    DuplicateRecord,
    UnknownId,
    InvalidValue,
    IoFailure,
};

class TraceError : public std::runtime_error {
 public:
    TraceError(TraceErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}
    TraceErrorKind kind() const { return kind_; }

 private:
    TraceErrorKind kind_;
};

/// Immutable after construction/load; safe to share across threads.
class ActivationTrace {
 public:
    explicit ActivationTrace(std::uint32_t total_timesteps = 1);

    /// Registers a layer with its weights (c_out × c_in, row-major) and the
    /// fixed flattened-position count N used by all its records.
    std::uint32_t add_layer(const LayerSpec& spec, std::vector<float> weights,
                            std::uint32_t positions);

    std::uint32_t add_group(const PromptGroup& group);

    void add_record(const std::string& layer_id, std::uint32_t timestep,
                    const std::string& group_id, std::uint32_t prompt_index,
                    std::vector<float> activations);

    std::uint32_t total_timesteps() const { return total_timesteps_; }

    std::size_t layer_count() const { return layers_.size(); }
    std::size_t group_count() const { return groups_.size(); }
    std::size_t record_count() const { return records_.size(); }

    const LayerSpec& layer_spec(std::uint32_t index) const { return layers_[index].spec; }
    std::uint32_t layer_positions(std::uint32_t index) const { return layers_[index].positions; }
    const std::vector<float>& layer_weights(std::uint32_t index) const {
        return layers_[index].weights;
    }

    const PromptGroup& group(std::uint32_t index) const { return groups_[index]; }

    std::uint32_t layer_index(const std::string& layer_id) const;
    std::uint32_t group_index(const std::string& group_id) const;
    bool has_layer(const std::string& layer_id) const;
    bool has_group(const std::string& group_id) const;

    /// All prompt records for one (layer, timestep, group), ordered by
    /// prompt_index. Missing records simply do not appear.
    std::vector<const ActivationRecord*> slice_records(const std::string& layer_id,
                                                       std::uint32_t timestep,
                                                       const std::string& group_id) const;

    /// Record lookup by exact key; nullptr when absent.
    const ActivationRecord* find_record(const RecordKey& key) const;

    friend bool operator==(const ActivationTrace& a, const ActivationTrace& b);

 private:
    struct Layer {
        LayerSpec spec;
        std::uint32_t positions = 0;
        std::vector<float> weights;
    };

    std::uint32_t total_timesteps_ = 1;
    std::vector<Layer> layers_;
    std::vector<PromptGroup> groups_;
    std::map<RecordKey, ActivationRecord> records_;
    std::map<std::string, std::uint32_t> layer_lookup_;
    std::map<std::string, std::uint32_t> group_lookup_;

    friend std::size_t write_trace(const ActivationTrace&, std::ostream&);
};

bool operator==(const LayerSpec& a, const LayerSpec& b);
bool operator==(const PromptGroup& a, const PromptGroup& b);

/// Serializes in the FIAT format. Returns the number of bytes written.
/// Validates trace invariants before any byte is emitted.
std::size_t write_trace(const ActivationTrace& trace, std::ostream& sink);

/// Parses a FIAT stream, validating all invariants.
ActivationTrace read_trace(std::istream& source);

std::size_t save_trace(const ActivationTrace& trace, const std::filesystem::path& path);
ActivationTrace load_trace(const std::filesystem::path& path);

}  // namespace fia::trace
