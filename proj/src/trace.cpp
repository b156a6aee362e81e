#include "fia/trace.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace fia::trace {

namespace {

constexpr char kMagic[4] = {'F', 'I', 'A', 'T'};
constexpr std::uint16_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "FIAT I/O assumes a little-endian host");

void check_finite(const std::vector<float>& values, const char* what) {
    for (float v : values) {
        if (!std::isfinite(v)) {
            throw TraceError(TraceErrorKind::NonFinite,
                             std::string("non-finite value in ") + what);
        }
    }
}

class Writer {
 public:
    explicit Writer(std::ostream& out) : out_(out) {}

    template <typename T>
    void put(T value) {
        out_.write(reinterpret_cast<const char*>(&value), sizeof(T));
        bytes_ += sizeof(T);
    }

    void put_string(const std::string& s) {
        if (s.size() > std::numeric_limits<std::uint16_t>::max()) {
            throw TraceError(TraceErrorKind::InvalidValue, "identifier too long");
        }
        put<std::uint16_t>(static_cast<std::uint16_t>(s.size()));
        out_.write(s.data(), static_cast<std::streamsize>(s.size()));
        bytes_ += s.size();
    }

    void put_floats(const std::vector<float>& values) {
        out_.write(reinterpret_cast<const char*>(values.data()),
                   static_cast<std::streamsize>(values.size() * sizeof(float)));
        bytes_ += values.size() * sizeof(float);
    }

    std::size_t bytes() const { return bytes_; }

    void check() const {
        if (!out_) throw TraceError(TraceErrorKind::IoFailure, "write failed");
    }

 private:
    std::ostream& out_;
    std::size_t bytes_ = 0;
};

class Reader {
 public:
    explicit Reader(std::istream& in) : in_(in) {}

    template <typename T>
    T get() {
        T value{};
        in_.read(reinterpret_cast<char*>(&value), sizeof(T));
        if (in_.gcount() != sizeof(T)) {
            throw TraceError(TraceErrorKind::Truncated, "truncated stream");
        }
        return value;
    }

    std::string get_string() {
        const auto len = get<std::uint16_t>();
        std::string s(len, '\0');
        in_.read(s.data(), len);
        if (in_.gcount() != static_cast<std::streamsize>(len)) {
            throw TraceError(TraceErrorKind::Truncated, "truncated stream");
        }
        return s;
    }

    std::vector<float> get_floats(std::size_t count) {
        std::vector<float> values(count);
        const auto bytes = static_cast<std::streamsize>(count * sizeof(float));
        in_.read(reinterpret_cast<char*>(values.data()), bytes);
        if (in_.gcount() != bytes) {
            throw TraceError(TraceErrorKind::Truncated, "truncated stream");
        }
        return values;
    }

 private:
    std::istream& in_;
};

}  // namespace

const char* target_kind_name(TargetKind kind) {
    switch (kind) {
        case TargetKind::Ffn1: return "FFN1";
        case TargetKind::Ffn2: return "FFN2";
        case TargetKind::AttnK: return "ATTN_K";
        case TargetKind::AttnV: return "ATTN_V";
        case TargetKind::Other: return "OTHER";
    }
    return "OTHER";
}

std::optional<TargetKind> target_kind_from_name(std::string_view name) {
    if (name == "FFN1") return TargetKind::Ffn1;
    if (name == "FFN2") return TargetKind::Ffn2;
    if (name == "ATTN_K") return TargetKind::AttnK;
    if (name == "ATTN_V") return TargetKind::AttnV;
    if (name == "OTHER") return TargetKind::Other;
    return std::nullopt;
}

bool operator==(const LayerSpec& a, const LayerSpec& b) {
    return a.layer_id == b.layer_id && a.c_in == b.c_in && a.c_out == b.c_out &&
           a.target_kind == b.target_kind;
}

bool operator==(const PromptGroup& a, const PromptGroup& b) {
    return a.group_id == b.group_id && a.kind == b.kind && a.concept_id == b.concept_id &&
           a.prompt_count == b.prompt_count;
}

namespace {

// Bit-exact payload comparison; memcmp also distinguishes -0.0 from 0.0,
// which is what the round-trip guarantee promises.
bool bits_equal(const std::vector<float>& a, const std::vector<float>& b) {
    if (a.size() != b.size()) return false;
    return a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

}  // namespace

bool operator==(const ActivationTrace& a, const ActivationTrace& b) {
    if (a.total_timesteps_ != b.total_timesteps_) return false;
    if (a.groups_ != b.groups_) return false;
    if (a.layers_.size() != b.layers_.size()) return false;
    for (std::size_t i = 0; i < a.layers_.size(); ++i) {
        if (!(a.layers_[i].spec == b.layers_[i].spec)) return false;
        if (a.layers_[i].positions != b.layers_[i].positions) return false;
        if (!bits_equal(a.layers_[i].weights, b.layers_[i].weights)) return false;
    }
    if (a.records_.size() != b.records_.size()) return false;
    auto ita = a.records_.begin();
    auto itb = b.records_.begin();
    for (; ita != a.records_.end(); ++ita, ++itb) {
        if (ita->first != itb->first) return false;
        if (!bits_equal(ita->second.activations, itb->second.activations)) return false;
    }
    return true;
}

ActivationTrace::ActivationTrace(std::uint32_t total_timesteps)
    : total_timesteps_(total_timesteps) {
    if (total_timesteps == 0) {
        throw TraceError(TraceErrorKind::InvalidValue, "total_timesteps must be positive");
    }
}

std::uint32_t ActivationTrace::add_layer(const LayerSpec& spec, std::vector<float> weights,
                                         std::uint32_t positions) {
    if (spec.c_in == 0 || spec.c_out == 0) {
        throw TraceError(TraceErrorKind::InvalidValue, "layer channels must be positive");
    }
    if (positions == 0) {
        throw TraceError(TraceErrorKind::InvalidValue, "layer positions must be positive");
    }
    if (layer_lookup_.count(spec.layer_id) != 0) {
        throw TraceError(TraceErrorKind::InvalidValue,
                         "duplicate layer_id: " + spec.layer_id);
    }
    if (weights.size() != static_cast<std::size_t>(spec.c_out) * spec.c_in) {
        throw TraceError(TraceErrorKind::ShapeMismatch,
                         "weight matrix shape does not match layer spec");
    }
    check_finite(weights, "layer weights");
    const auto index = static_cast<std::uint32_t>(layers_.size());
    layers_.push_back(Layer{spec, positions, std::move(weights)});
    layer_lookup_.emplace(spec.layer_id, index);
    return index;
}

std::uint32_t ActivationTrace::add_group(const PromptGroup& group) {
    if (group.prompt_count == 0) {
        throw TraceError(TraceErrorKind::InvalidValue, "prompt_count must be positive");
    }
    if (group.kind == GroupKind::Base && group.prompt_count < 2) {
        throw TraceError(TraceErrorKind::InvalidValue,
                         "BASE groups need at least 2 prompts (base std undefined otherwise)");
    }
    if (group.kind == GroupKind::Concept && group.concept_id.empty()) {
        throw TraceError(TraceErrorKind::InvalidValue,
                         "CONCEPT groups require a concept_id");
    }
    if (group.kind == GroupKind::Base && !group.concept_id.empty()) {
        throw TraceError(TraceErrorKind::InvalidValue,
                         "BASE groups must not carry a concept_id");
    }
    if (group_lookup_.count(group.group_id) != 0) {
        throw TraceError(TraceErrorKind::InvalidValue,
                         "duplicate group_id: " + group.group_id);
    }
    const auto index = static_cast<std::uint32_t>(groups_.size());
    groups_.push_back(group);
    group_lookup_.emplace(group.group_id, index);
    return index;
}

void ActivationTrace::add_record(const std::string& layer_id, std::uint32_t timestep,
                                 const std::string& group_id, std::uint32_t prompt_index,
                                 std::vector<float> activations) {
    const auto li = layer_index(layer_id);
    const auto gi = group_index(group_id);
    const Layer& layer = layers_[li];
    const PromptGroup& grp = groups_[gi];
    if (timestep < 1 || timestep > total_timesteps_) {
        throw TraceError(TraceErrorKind::InvalidValue, "timestep out of range");
    }
    if (prompt_index >= grp.prompt_count) {
        throw TraceError(TraceErrorKind::InvalidValue, "prompt_index out of range");
    }
    if (activations.size() !=
        static_cast<std::size_t>(layer.positions) * layer.spec.c_in) {
        throw TraceError(TraceErrorKind::ShapeMismatch,
                         "activation shape does not match layer N x c_in");
    }
    check_finite(activations, "activations");
    RecordKey key{li, timestep, gi, prompt_index};
    auto [it, inserted] = records_.try_emplace(key, ActivationRecord{key, std::move(activations)});
    if (!inserted) {
        throw TraceError(TraceErrorKind::DuplicateRecord,
                         "duplicate (layer, timestep, group, prompt) record");
    }
}

std::uint32_t ActivationTrace::layer_index(const std::string& layer_id) const {
    auto it = layer_lookup_.find(layer_id);
    if (it == layer_lookup_.end()) {
        throw TraceError(TraceErrorKind::UnknownId, "unknown layer_id: " + layer_id);
    }
    return it->second;
}

std::uint32_t ActivationTrace::group_index(const std::string& group_id) const {
    auto it = group_lookup_.find(group_id);
    if (it == group_lookup_.end()) {
        throw TraceError(TraceErrorKind::UnknownId, "unknown group_id: " + group_id);
    }
    return it->second;
}

bool ActivationTrace::has_layer(const std::string& layer_id) const {
    return layer_lookup_.count(layer_id) != 0;
}

bool ActivationTrace::has_group(const std::string& group_id) const {
    return group_lookup_.count(group_id) != 0;
}

std::vector<const ActivationRecord*> ActivationTrace::slice_records(
    const std::string& layer_id, std::uint32_t timestep, const std::string& group_id) const {
    const auto li = layer_index(layer_id);
    const auto gi = group_index(group_id);
    std::vector<const ActivationRecord*> out;
    const RecordKey lo{li, timestep, gi, 0};
    for (auto it = records_.lower_bound(lo); it != records_.end(); ++it) {
        const RecordKey& k = it->first;
        if (k.layer_index != li || k.timestep != timestep || k.group_index != gi) break;
        out.push_back(&it->second);
    }
    return out;
}

const ActivationRecord* ActivationTrace::find_record(const RecordKey& key) const {
    auto it = records_.find(key);
    return it == records_.end() ? nullptr : &it->second;
}

std::size_t write_trace(const ActivationTrace& trace, std::ostream& sink) {
    // Invariants are enforced on mutation; the record map keeps entries in
    // (layer, timestep, group, prompt) order, giving deterministic bytes.
    Writer w(sink);
    sink.write(kMagic, 4);
    w.put<std::uint16_t>(kVersion);
    w.put<std::uint16_t>(0);  // reserved

    w.put<std::uint32_t>(static_cast<std::uint32_t>(trace.layers_.size()));
    for (const auto& layer : trace.layers_) {
        w.put_string(layer.spec.layer_id);
        w.put<std::uint32_t>(layer.spec.c_in);
        w.put<std::uint32_t>(layer.spec.c_out);
        w.put<std::uint8_t>(static_cast<std::uint8_t>(layer.spec.target_kind));
        w.put_floats(layer.weights);
        w.put<std::uint32_t>(layer.positions);
    }

    w.put<std::uint32_t>(static_cast<std::uint32_t>(trace.groups_.size()));
    for (const auto& group : trace.groups_) {
        w.put_string(group.group_id);
        w.put<std::uint8_t>(static_cast<std::uint8_t>(group.kind));
        w.put_string(group.concept_id);
        w.put<std::uint32_t>(group.prompt_count);
    }

    w.put<std::uint32_t>(trace.total_timesteps_);
    w.put<std::uint64_t>(trace.records_.size());
    for (const auto& [key, record] : trace.records_) {
        w.put<std::uint32_t>(key.layer_index);
        w.put<std::uint32_t>(key.timestep);
        w.put<std::uint32_t>(key.group_index);
        w.put<std::uint32_t>(key.prompt_index);
        w.put_floats(record.activations);
    }
    w.put<std::uint64_t>(trace.records_.size());  // truncation sentinel
    w.check();
    return w.bytes() + 4;  // magic bytes are written outside the counter
}

ActivationTrace read_trace(std::istream& source) {
    Reader r(source);
    char magic[4];
    source.read(magic, 4);
    if (source.gcount() != 4) throw TraceError(TraceErrorKind::Truncated, "truncated stream");
    if (std::memcmp(magic, kMagic, 4) != 0) {
        throw TraceError(TraceErrorKind::BadMagic, "bad magic");
    }
    const auto version = r.get<std::uint16_t>();
    if (version != kVersion) {
        throw TraceError(TraceErrorKind::BadVersion, "unsupported FIAT version");
    }
    r.get<std::uint16_t>();  // reserved

    struct PendingLayer {
        LayerSpec spec;
        std::vector<float> weights;
        std::uint32_t positions;
    };

    const auto layer_count = r.get<std::uint32_t>();
    std::vector<PendingLayer> layers;
    layers.reserve(layer_count);
    for (std::uint32_t i = 0; i < layer_count; ++i) {
        PendingLayer layer;
        layer.spec.layer_id = r.get_string();
        layer.spec.c_in = r.get<std::uint32_t>();
        layer.spec.c_out = r.get<std::uint32_t>();
        const auto kind = r.get<std::uint8_t>();
        if (kind > static_cast<std::uint8_t>(TargetKind::Other)) {
            throw TraceError(TraceErrorKind::InvalidValue, "invalid target_kind");
        }
        layer.spec.target_kind = static_cast<TargetKind>(kind);
        if (layer.spec.c_in == 0 || layer.spec.c_out == 0) {
            throw TraceError(TraceErrorKind::InvalidValue, "layer channels must be positive");
        }
        layer.weights =
            r.get_floats(static_cast<std::size_t>(layer.spec.c_out) * layer.spec.c_in);
        layer.positions = r.get<std::uint32_t>();
        layers.push_back(std::move(layer));
    }

    const auto group_count = r.get<std::uint32_t>();
    std::vector<PromptGroup> groups;
    groups.reserve(group_count);
    for (std::uint32_t i = 0; i < group_count; ++i) {
        PromptGroup group;
        group.group_id = r.get_string();
        const auto kind = r.get<std::uint8_t>();
        if (kind > static_cast<std::uint8_t>(GroupKind::Base)) {
            throw TraceError(TraceErrorKind::InvalidValue, "invalid group kind");
        }
        group.kind = static_cast<GroupKind>(kind);
        group.concept_id = r.get_string();
        group.prompt_count = r.get<std::uint32_t>();
        groups.push_back(std::move(group));
    }

    const auto total_timesteps = r.get<std::uint32_t>();
    ActivationTrace out(total_timesteps);
    for (auto& layer : layers) {
        out.add_layer(layer.spec, std::move(layer.weights), layer.positions);
    }
    for (const auto& group : groups) out.add_group(group);

    const auto record_count = r.get<std::uint64_t>();
    for (std::uint64_t i = 0; i < record_count; ++i) {
        const auto layer_index = r.get<std::uint32_t>();
        const auto timestep = r.get<std::uint32_t>();
        const auto group_index = r.get<std::uint32_t>();
        const auto prompt_index = r.get<std::uint32_t>();
        if (layer_index >= out.layer_count()) {
            throw TraceError(TraceErrorKind::InvalidValue, "record layer index out of range");
        }
        if (group_index >= out.group_count()) {
            throw TraceError(TraceErrorKind::InvalidValue, "record group index out of range");
        }
        const auto& spec = out.layer_spec(layer_index);
        const auto n = out.layer_positions(layer_index);
        auto values = r.get_floats(static_cast<std::size_t>(n) * spec.c_in);
        out.add_record(spec.layer_id, timestep, out.group(group_index).group_id, prompt_index,
                       std::move(values));
    }
    const auto sentinel = r.get<std::uint64_t>();
    if (sentinel != record_count) {
        throw TraceError(TraceErrorKind::Truncated, "truncated: sentinel mismatch");
    }
    return out;
}

std::size_t save_trace(const ActivationTrace& trace, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw TraceError(TraceErrorKind::IoFailure, "cannot open " + path.string());
    const auto bytes = write_trace(trace, out);
    out.flush();
    if (!out) throw TraceError(TraceErrorKind::IoFailure, "write failed: " + path.string());
    return bytes;
}

ActivationTrace load_trace(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw TraceError(TraceErrorKind::IoFailure, "cannot open " + path.string());
    return read_trace(in);
}

}  // namespace fia::trace
