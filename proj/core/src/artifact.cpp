#include "ldp/artifact.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace ldp {

namespace {

constexpr char kMagic[8] = {'L', 'D', 'P', 'A', 'R', 'T', '0', '1'};

void put_u32le(std::string& out, uint32_t v) {
    out.push_back(static_cast<char>(v & 0xFF));
    out.push_back(static_cast<char>((v >> 8) & 0xFF));
    out.push_back(static_cast<char>((v >> 16) & 0xFF));
    out.push_back(static_cast<char>((v >> 24) & 0xFF));
}

void put_u64le(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

uint64_t get_u64le(const unsigned char* p) {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
    return v;
}

uint32_t get_u32le(const unsigned char* p) {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[i]) << (8 * i);
    return v;
}

int64_t shape_numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

}  // namespace

void save_artifact(const std::string& path, const Artifact& artifact) {
    nlohmann::json header;
    header["kind"] = artifact.kind;
    header["meta"] = artifact.meta;
    nlohmann::json arrs = nlohmann::json::array();
    for (const NamedArray& a : artifact.arrays) {
        if (a.shape.empty() || shape_numel(a.shape) != static_cast<int64_t>(a.data.size()))
            throw std::invalid_argument("save_artifact: array '" + a.name +
                                        "' shape does not match data length");
        for (float v : a.data)
            if (!std::isfinite(v))
                throw std::invalid_argument("save_artifact: array '" + a.name +
                                            "' contains a non-finite value");
        arrs.push_back({{"name", a.name}, {"shape", a.shape}});
    }
    header["arrays"] = arrs;

    std::string body;
    body.append(kMagic, sizeof(kMagic));
    const std::string header_text = header.dump();
    put_u64le(body, header_text.size());
    body += header_text;
    for (const NamedArray& a : artifact.arrays)
        for (float v : a.data) put_u32le(body, std::bit_cast<uint32_t>(v));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("save_artifact: cannot open '" + path + "' for writing");
    out.write(body.data(), static_cast<std::streamsize>(body.size()));
    if (!out) throw std::runtime_error("save_artifact: write failed for '" + path + "'");
}

void save_artifact(const std::string& path, const std::string& kind,
                   const std::vector<NamedArray>& arrays,
                   const std::map<std::string, std::string>& meta) {
    save_artifact(path, Artifact{kind, arrays, meta});
}

Artifact load_artifact(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_artifact: cannot open '" + path + "'");
    std::string raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto* p = reinterpret_cast<const unsigned char*>(raw.data());

    if (raw.size() < 16 || std::memcmp(raw.data(), kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("load_artifact: '" + path + "' is not an LDP artifact");

    const uint64_t header_len = get_u64le(p + 8);
    if (16 + header_len > raw.size())
        throw std::runtime_error("load_artifact: '" + path + "' header is truncated");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(raw.substr(16, header_len));
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("load_artifact: '" + path + "' has a malformed header: " +
                                 e.what());
    }

    Artifact artifact;
    artifact.kind = header.at("kind").get<std::string>();
    artifact.meta = header.at("meta").get<std::map<std::string, std::string>>();

    uint64_t expected_payload = 0;
    for (const auto& j : header.at("arrays")) {
        NamedArray a;
        a.name = j.at("name").get<std::string>();
        a.shape = j.at("shape").get<std::vector<int>>();
        expected_payload += static_cast<uint64_t>(shape_numel(a.shape)) * 4;
        artifact.arrays.push_back(std::move(a));
    }

    const uint64_t payload_len = raw.size() - 16 - header_len;
    if (payload_len != expected_payload)
        throw std::runtime_error("load_artifact: '" + path + "' payload length mismatch (header " +
                                 std::to_string(expected_payload) + " bytes, file " +
                                 std::to_string(payload_len) + " bytes)");

    const unsigned char* cursor = p + 16 + header_len;
    for (NamedArray& a : artifact.arrays) {
        const int64_t n = shape_numel(a.shape);
        a.data.resize(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i, cursor += 4)
            a.data[static_cast<size_t>(i)] = std::bit_cast<float>(get_u32le(cursor));
    }
    return artifact;
}

NamedArray to_named_array(const std::string& name, const Tensor& t) {
    NamedArray a;
    a.name = name;
    a.shape = t.shape;
    a.data.reserve(t.data.size());
    for (double v : t.data) a.data.push_back(static_cast<float>(v));
    return a;
}

Tensor to_tensor(const NamedArray& a) {
    Tensor t(a.shape);
    for (size_t i = 0; i < a.data.size(); ++i) t.data[i] = static_cast<double>(a.data[i]);
    return t;
}

const NamedArray& find_array(const Artifact& a, const std::string& name) {
    for (const NamedArray& arr : a.arrays)
        if (arr.name == name) return arr;
    throw std::runtime_error("artifact '" + a.kind + "' has no array named '" + name + "'");
}

}  // namespace ldp
