#pragma once

// Checkpoint file: a UTF-8 manifest followed by a little-endian float32
// payload.
//
//   MCLCKPT 1
//   config_hash <16 hex digits>
//   global_step <n>
//   dtype float32
//   tensor <name> <d0,d1,...> <offset> <count>     (offsets in floats)
//   ...
//   payload <bytes>
//   <raw bytes>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mcl/tensor.hpp"

namespace mcl {

struct CheckpointData {
    std::uint64_t config_hash = 0;
    long global_step = 0;
    std::vector<std::pair<std::string, Tensor<float>>> tensors;

    const Tensor<float>& get(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return t;
        throw std::runtime_error("checkpoint: no tensor named " + name);
    }
};

namespace ckpt_detail {

inline std::uint32_t to_le(std::uint32_t v) {
    if constexpr (std::endian::native == std::endian::big)
        v = ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
    return v;
}

}  // namespace ckpt_detail

/// Written to `path`.tmp and renamed, so a crash never leaves a torn file.
inline void save_checkpoint(const std::string& path, const CheckpointData& d) {
    std::ostringstream man;
    man << "MCLCKPT 1\n";
    man << "config_hash " << std::hex;
    man.width(16);
    man.fill('0');
    man << d.config_hash << std::dec << "\n";
    man << "global_step " << d.global_step << "\n";
    man << "dtype float32\n";
    std::size_t offset = 0;
    for (const auto& [name, t] : d.tensors) {
        if (name.find_first_of(" \t\n") != std::string::npos)
            throw std::invalid_argument("save_checkpoint: tensor name has whitespace: " + name);
        man << "tensor " << name << " ";
        for (std::size_t i = 0; i < t.rank(); ++i) man << (i ? "," : "") << t.dim(i);
        if (t.rank() == 0) man << "-";
        man << " " << offset << " " << t.size() << "\n";
        offset += t.size();
    }
    man << "payload " << offset * 4 << "\n";

    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("save_checkpoint: cannot open " + tmp);
        const std::string m = man.str();
        out.write(m.data(), static_cast<std::streamsize>(m.size()));
        std::vector<std::uint32_t> buf;
        for (const auto& [name, t] : d.tensors) {
            buf.resize(t.size());
            for (std::size_t i = 0; i < t.size(); ++i) buf[i] = ckpt_detail::to_le(std::bit_cast<std::uint32_t>(t[i]));
            out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
        }
        if (!out) throw std::runtime_error("save_checkpoint: write failed for " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

inline CheckpointData load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
    auto bad = [&](const std::string& why) { return std::runtime_error("load_checkpoint: " + path + ": " + why); };
    std::string line;
    if (!std::getline(in, line) || line != "MCLCKPT 1") throw bad("missing MCLCKPT header");

    CheckpointData d;
    struct Entry {
        std::string name;
        Shape shape;
        std::size_t offset, count;
    };
    std::vector<Entry> entries;
    std::size_t payload = 0;
    bool have_payload = false;
    while (!have_payload && std::getline(in, line)) {
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "config_hash") {
            ls >> std::hex >> d.config_hash;
        } else if (key == "global_step") {
            ls >> d.global_step;
        } else if (key == "dtype") {
            std::string dt;
            ls >> dt;
            if (dt != "float32") throw bad("unsupported dtype " + dt);
        } else if (key == "tensor") {
            Entry e;
            std::string dims;
            ls >> e.name >> dims >> e.offset >> e.count;
            if (dims != "-") {
                std::stringstream ds(dims);
                std::string tok;
                while (std::getline(ds, tok, ',')) e.shape.push_back(std::stoul(tok));
            }
            if (numel(e.shape) != e.count) throw bad("shape/count mismatch for " + e.name);
            entries.push_back(std::move(e));
        } else if (key == "payload") {
            ls >> payload;
            have_payload = true;
        } else {
            throw bad("unknown manifest line '" + line + "'");
        }
        if (!ls && key != "payload") throw bad("malformed manifest line '" + line + "'");
    }
    if (!have_payload) throw bad("missing payload line");
    if (payload % 4) throw bad("payload size not a multiple of 4");
    std::vector<std::uint32_t> raw(payload / 4);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(payload));
    if (static_cast<std::size_t>(in.gcount()) != payload) throw bad("truncated payload");
    for (const auto& e : entries) {
        if (e.offset + e.count > raw.size()) throw bad("tensor " + e.name + " runs past the payload");
        Tensor<float> t(e.shape);
        for (std::size_t i = 0; i < e.count; ++i) t[i] = std::bit_cast<float>(ckpt_detail::to_le(raw[e.offset + i]));
        d.tensors.emplace_back(e.name, std::move(t));
    }
    return d;
}

}  // namespace mcl
