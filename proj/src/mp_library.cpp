#include "mpdrive/mp_library.hpp"

#include <array>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "mpdrive/errors.hpp"
#include "mpdrive/mlp.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace mpdrive {
namespace {

constexpr std::uint32_t kClassifierFormatVersion = 1;
constexpr char kClassifierMagic[4] = {'M', 'P', 'C', 'L'};

std::vector<unsigned char> read_file(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw CorruptionError(p.string() + ": cannot open");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                     std::istreambuf_iterator<char>());
    if (f.bad()) throw CorruptionError(p.string() + ": read failed");
    return bytes;
}

void write_file(const fs::path& p, const void* data, std::size_t n) {
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    if (!f) throw CorruptionError(p.string() + ": cannot open for writing");
    f.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!f) throw CorruptionError(p.string() + ": write failed");
}

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::vector<unsigned char>& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(out, bits);
}

struct ByteReader {
    const std::vector<unsigned char>& bytes;
    std::size_t pos = 0;
    const std::string& name;

    void need(std::size_t n) const {
        if (pos + n > bytes.size()) throw FormatError(name + ": truncated block");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
    double f64() {
        const std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
};

std::vector<unsigned char> serialize_classifier(const InitiationClassifier& clf) {
    std::vector<unsigned char> out(kClassifierMagic, kClassifierMagic + 4);
    put_u32(out, kClassifierFormatVersion);
    const std::uint64_t rows = clf.support.size();
    const std::uint64_t cols = rows == 0 ? 0 : clf.support[0].size();
    put_u64(out, rows);
    put_u64(out, cols);
    for (const auto& row : clf.support)
        for (double x : row) put_f64(out, x);
    for (double a : clf.alpha) put_f64(out, a);
    return out;
}

InitiationClassifier deserialize_classifier(const std::vector<unsigned char>& bytes,
                                            const std::string& name, const json& meta) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kClassifierMagic, 4) != 0)
        throw FormatError(name + ": bad classifier magic");
    ByteReader r{bytes, 4, name};
    const std::uint32_t version = r.u32();
    if (version != kClassifierFormatVersion)
        throw FormatError(name + ": unsupported classifier version " + std::to_string(version));
    const std::uint64_t rows = r.u64();
    const std::uint64_t cols = r.u64();
    if (rows != meta.at("support_count").get<std::uint64_t>())
        throw FormatError(name + ": support count disagrees with the manifest");

    InitiationClassifier clf;
    clf.nu = meta.at("nu").get<double>();
    clf.sigma = meta.at("sigma").get<double>();
    clf.rho = meta.at("rho").get<double>();
    clf.feature_dims = meta.at("feature_dims").get<std::vector<int>>();
    clf.support.resize(rows);
    for (auto& row : clf.support) {
        row.resize(cols);
        for (auto& x : row) x = r.f64();
    }
    clf.alpha.resize(rows);
    for (auto& a : clf.alpha) a = r.f64();
    if (r.pos != bytes.size()) throw FormatError(name + ": trailing bytes after classifier data");
    return clf;
}

constexpr char kDecisionMagic[] = {'M', 'P', 'D', 'Q'};
constexpr std::uint32_t kDecisionFormatVersion = 1;

std::vector<unsigned char> serialize_decision(const DecisionNetSnapshot& head) {
    const auto online = serialize_params(head.spec, head.online);
    const auto target = serialize_params(head.spec, head.target);
    std::vector<unsigned char> out(kDecisionMagic, kDecisionMagic + 4);
    put_u32(out, kDecisionFormatVersion);
    put_u64(out, online.size());
    out.insert(out.end(), online.begin(), online.end());
    put_u64(out, target.size());
    out.insert(out.end(), target.begin(), target.end());
    return out;
}

void deserialize_decision(const std::vector<unsigned char>& bytes, const std::string& name,
                          DecisionNetSnapshot& head) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kDecisionMagic, 4) != 0)
        throw FormatError(name + ": bad decision magic");
    ByteReader r{bytes, 4, name};
    const std::uint32_t version = r.u32();
    if (version != kDecisionFormatVersion)
        throw FormatError(name + ": unsupported decision version " + std::to_string(version));
    auto take = [&](const char* which) {
        const auto len = static_cast<std::size_t>(r.u64());
        r.need(len);
        const std::vector<unsigned char> sub(bytes.begin() + static_cast<std::ptrdiff_t>(r.pos),
                                             bytes.begin() +
                                                 static_cast<std::ptrdiff_t>(r.pos + len));
        r.pos += len;
        return deserialize_params(head.spec, sub, name + std::string(" (") + which + ")");
    };
    head.online = take("online");
    head.target = take("target");
    if (r.pos != bytes.size()) throw FormatError(name + ": trailing bytes after decision data");
}

json spec_to_json(const MlpSpec& spec) {
    json j;
    j["layer_sizes"] = spec.layer_sizes;
    j["output_activation"] = spec.output_activation == OutputActivation::tanh ? "tanh" : "linear";
    j["batch_norm"] = spec.batch_norm;
    return j;
}

MlpSpec spec_from_json(const json& j) {
    MlpSpec spec;
    spec.layer_sizes = j.at("layer_sizes").get<std::vector<int>>();
    const std::string act = j.at("output_activation").get<std::string>();
    if (act == "tanh")
        spec.output_activation = OutputActivation::tanh;
    else if (act == "linear")
        spec.output_activation = OutputActivation::linear;
    else
        throw FormatError("manifest.json: unknown output activation '" + act + "'");
    spec.batch_norm = j.at("batch_norm").get<std::vector<std::uint8_t>>();
    spec.validate();
    return spec;
}

std::string crc_hex(const std::vector<unsigned char>& bytes) {
    char buf[9];
    std::snprintf(buf, sizeof buf, "%08x", crc32_ieee(bytes.data(), bytes.size()));
    return buf;
}

std::string mp_dirname(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "mp_%03zu", i);
    return buf;
}

} // namespace

std::vector<int> available_options(const Library& lib, const std::vector<double>& s) {
    std::vector<int> ids;
    for (std::size_t i = 0; i < lib.mps.size(); ++i) {
        if (!lib.mps[i].initiation)
            throw ContractViolation("primitive " + std::to_string(i) + " has no classifier");
        if (lib.mps[i].initiation->contains(s)) ids.push_back(static_cast<int>(i));
    }
    return ids;
}

std::pair<int, bool> match_or_create(Library& lib, const std::vector<double>& s,
                                     const MpFactory& factory, const std::string& subtask_tag,
                                     int creation_phase, const GrowNotify& on_grow) {
    const auto avail = available_options(lib, s);
    if (!avail.empty()) return {avail.front(), false};

    if (!factory) throw ContractViolation("no factory supplied for an unrecognized state");
    std::vector<MotionPrimitive> chain = factory(); // failures leave the library untouched
    if (chain.empty()) throw ContractViolation("factory returned an empty chain");

    const int base = static_cast<int>(lib.mps.size());
    for (std::size_t k = 0; k < chain.size(); ++k) {
        chain[k].id = base + static_cast<int>(k);
        chain[k].metadata.subtask = subtask_tag;
        chain[k].metadata.creation_phase = creation_phase;
    }
    const int last = base + static_cast<int>(chain.size()) - 1;
    for (auto& mp : chain) lib.mps.push_back(std::move(mp));
    lib.creation_log.push_back("phase " + std::to_string(creation_phase) + ": subtask " +
                               subtask_tag + " -> mp " + std::to_string(base) + ".." +
                               std::to_string(last));
    if (on_grow) on_grow(static_cast<int>(lib.mps.size()));

    int chosen = last;
    for (int id = base; id <= last; ++id) {
        if (lib.mps[static_cast<std::size_t>(id)].initiation->contains(s)) {
            chosen = id;
            break;
        }
    }
    return {chosen, true};
}

std::uint32_t crc32_ieee(const unsigned char* data, std::size_t n) {
    static const std::array<std::uint32_t, 256> table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    std::uint32_t crc = 0xFFFFFFFFu;
    for (std::size_t i = 0; i < n; ++i)
        crc = table[(crc ^ data[i]) & 0xFFu] ^ (crc >> 8);
    return crc ^ 0xFFFFFFFFu;
}

void save_library(const Library& lib, const std::string& dir) {
    if (lib.format_version != kLibraryFormatVersion)
        throw FormatError("library carries format version " + std::to_string(lib.format_version) +
                          "; this writer emits version " + std::to_string(kLibraryFormatVersion));
    fs::create_directories(dir);

    json manifest;
    manifest["format_version"] = lib.format_version;
    manifest["mp_count"] = lib.mps.size();
    manifest["creation_log"] = lib.creation_log;
    manifest["mps"] = json::array();

    for (std::size_t i = 0; i < lib.mps.size(); ++i) {
        const MotionPrimitive& mp = lib.mps[i];
        if (mp.id != static_cast<int>(i))
            throw ContractViolation("library ids must be dense and match positions");
        if (!mp.initiation) throw ContractViolation("primitive missing its classifier");

        const fs::path mp_dir = fs::path(dir) / mp_dirname(i);
        fs::create_directories(mp_dir);
        const auto actor_bytes = serialize_params(mp.policy.actor_spec, mp.policy.actor);
        const auto critic_bytes = serialize_params(mp.policy.critic_spec, mp.policy.critic);
        const auto clf_bytes = serialize_classifier(*mp.initiation);
        write_file(mp_dir / "actor.bin", actor_bytes.data(), actor_bytes.size());
        write_file(mp_dir / "critic.bin", critic_bytes.data(), critic_bytes.size());
        write_file(mp_dir / "classifier.bin", clf_bytes.data(), clf_bytes.size());

        json entry;
        entry["id"] = mp.id;
        entry["subtask"] = mp.metadata.subtask;
        entry["creation_phase"] = mp.metadata.creation_phase;
        entry["training_episodes"] = mp.metadata.training_episodes;
        entry["actor"] = spec_to_json(mp.policy.actor_spec);
        entry["critic"] = spec_to_json(mp.policy.critic_spec);
        json clf;
        clf["nu"] = mp.initiation->nu;
        clf["sigma"] = mp.initiation->sigma;
        clf["rho"] = mp.initiation->rho;
        clf["support_count"] = mp.initiation->support.size();
        clf["feature_dims"] = mp.initiation->feature_dims;
        entry["classifier"] = clf;

        json term;
        if (const auto* goal = std::get_if<GoalRegion>(&mp.termination.target)) {
            term["kind"] = "goal";
            term["dims"] = goal->dims;
            term["center"] = goal->center;
            term["radius"] = goal->radius;
        } else {
            const auto& clf_ptr =
                std::get<std::shared_ptr<const InitiationClassifier>>(mp.termination.target);
            int owner = -1;
            for (std::size_t j = 0; j < lib.mps.size(); ++j)
                if (lib.mps[j].initiation.get() == clf_ptr.get()) {
                    owner = static_cast<int>(j);
                    break;
                }
            if (owner < 0)
                throw ContractViolation(
                    "termination classifier of mp " + std::to_string(i) +
                    " is not the initiation set of any stored primitive");
            term["kind"] = "classifier";
            term["mp"] = owner;
        }
        entry["termination"] = term;

        json files;
        files["actor.bin"] = crc_hex(actor_bytes);
        files["critic.bin"] = crc_hex(critic_bytes);
        files["classifier.bin"] = crc_hex(clf_bytes);
        entry["files"] = files;
        manifest["mps"].push_back(std::move(entry));
    }

    if (lib.decision) {
        const DecisionNetSnapshot& head = *lib.decision;
        head.spec.validate();
        if (head.spec.output_size() != static_cast<int>(lib.mps.size()))
            throw ContractViolation("decision head width " +
                                    std::to_string(head.spec.output_size()) +
                                    " does not match the primitive count " +
                                    std::to_string(lib.mps.size()));
        const auto decision_bytes = serialize_decision(head);
        write_file(fs::path(dir) / "decision.bin", decision_bytes.data(), decision_bytes.size());
        json dec;
        dec["spec"] = spec_to_json(head.spec);
        dec["files"] = json{{"decision.bin", crc_hex(decision_bytes)}};
        manifest["decision"] = std::move(dec);
    }

    const std::string text = manifest.dump(2) + "\n";
    write_file(fs::path(dir) / "manifest.json", text.data(), text.size());
}

Library load_library(const std::string& dir) {
    const fs::path root(dir);
    const auto manifest_bytes = read_file(root / "manifest.json");
    json manifest;
    try {
        manifest = json::parse(manifest_bytes.begin(), manifest_bytes.end());
    } catch (const json::exception& e) {
        throw FormatError("manifest.json: " + std::string(e.what()));
    }

    Library lib;
    try {
        const auto version = manifest.at("format_version").get<std::uint32_t>();
        if (version != kLibraryFormatVersion)
            throw FormatError("manifest.json: format version " + std::to_string(version) +
                              " is not the supported version " +
                              std::to_string(kLibraryFormatVersion));
        lib.format_version = version;
        lib.creation_log = manifest.at("creation_log").get<std::vector<std::string>>();
        const auto count = manifest.at("mp_count").get<std::size_t>();
        const json& entries = manifest.at("mps");
        if (entries.size() != count)
            throw FormatError("manifest.json: mp_count disagrees with the entry list");

        for (std::size_t i = 0; i < count; ++i) {
            const json& entry = entries.at(i);
            if (entry.at("id").get<int>() != static_cast<int>(i))
                throw FormatError("manifest.json: ids must be dense and match positions");

            const fs::path mp_dir = root / mp_dirname(i);
            const json& files = entry.at("files");
            auto checked_read = [&](const char* name) {
                const fs::path p = mp_dir / name;
                auto bytes = read_file(p);
                if (crc_hex(bytes) != files.at(name).get<std::string>())
                    throw CorruptionError(p.string() + ": checksum mismatch");
                return bytes;
            };
            const auto actor_bytes = checked_read("actor.bin");
            const auto critic_bytes = checked_read("critic.bin");
            const auto clf_bytes = checked_read("classifier.bin");

            MotionPrimitive mp;
            mp.id = static_cast<int>(i);
            mp.metadata.subtask = entry.at("subtask").get<std::string>();
            mp.metadata.creation_phase = entry.at("creation_phase").get<int>();
            mp.metadata.training_episodes = entry.at("training_episodes").get<int>();
            mp.policy.actor_spec = spec_from_json(entry.at("actor"));
            mp.policy.critic_spec = spec_from_json(entry.at("critic"));
            mp.policy.actor = deserialize_params(mp.policy.actor_spec, actor_bytes,
                                                 (mp_dir / "actor.bin").string());
            mp.policy.critic = deserialize_params(mp.policy.critic_spec, critic_bytes,
                                                  (mp_dir / "critic.bin").string());
            mp.initiation = std::make_shared<const InitiationClassifier>(deserialize_classifier(
                clf_bytes, (mp_dir / "classifier.bin").string(), entry.at("classifier")));

            const json& term = entry.at("termination");
            const std::string kind = term.at("kind").get<std::string>();
            if (kind == "goal") {
                GoalRegion goal;
                goal.dims = term.at("dims").get<std::vector<int>>();
                goal.center = term.at("center").get<std::vector<double>>();
                goal.radius = term.at("radius").get<double>();
                goal.validate();
                mp.termination = TerminationSet{goal};
            } else if (kind == "classifier") {
                const int owner = term.at("mp").get<int>();
                if (owner < 0 || owner >= static_cast<int>(i))
                    throw FormatError("manifest.json: termination of mp " + std::to_string(i) +
                                      " must reference an earlier primitive");
                mp.termination =
                    TerminationSet{lib.mps[static_cast<std::size_t>(owner)].initiation};
            } else {
                throw FormatError("manifest.json: unknown termination kind '" + kind + "'");
            }
            lib.mps.push_back(std::move(mp));
        }

        if (manifest.contains("decision")) {
            const json& dec = manifest.at("decision");
            const fs::path p = root / "decision.bin";
            const auto bytes = read_file(p);
            if (crc_hex(bytes) != dec.at("files").at("decision.bin").get<std::string>())
                throw CorruptionError(p.string() + ": checksum mismatch");
            DecisionNetSnapshot head;
            head.spec = spec_from_json(dec.at("spec"));
            if (head.spec.output_size() != static_cast<int>(lib.mps.size()))
                throw FormatError("manifest.json: decision head width " +
                                  std::to_string(head.spec.output_size()) +
                                  " does not match the primitive count " +
                                  std::to_string(lib.mps.size()));
            deserialize_decision(bytes, p.string(), head);
            lib.decision = std::move(head);
        }
    } catch (const json::exception& e) {
        throw FormatError("manifest.json: " + std::string(e.what()));
    }
    return lib;
}

} // namespace mpdrive
