#pragma once

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tribeflow/common.hpp"
#include "tribeflow/state.hpp"

namespace tribeflow {

// Single versioned binary container, little-endian 64-bit floats throughout.
inline constexpr char kModelMagic[8] = {'T', 'B', 'F', 'L', 'O', 'W', '0', '1'};

namespace detail {

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw data_error("model file: truncated");
    return v;
}

inline void write_doubles(std::ostream& os, const std::vector<double>& v) {
    write_pod<std::uint64_t>(os, v.size());
    os.write(reinterpret_cast<const char*>(v.data()),
             static_cast<std::streamsize>(v.size() * sizeof(double)));
}

inline std::vector<double> read_doubles(std::istream& is) {
    const auto n = read_pod<std::uint64_t>(is);
    std::vector<double> v(n);
    is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!is) throw data_error("model file: truncated");
    return v;
}

inline void write_string(std::ostream& os, const std::string& s) {
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is) {
    const auto n = read_pod<std::uint32_t>(is);
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is) throw data_error("model file: truncated");
    return s;
}

inline void write_names(std::ostream& os, const std::vector<std::string>& names) {
    write_pod<std::uint64_t>(os, names.size());
    for (const auto& s : names) write_string(os, s);
}

inline std::vector<std::string> read_names(std::istream& is) {
    const auto n = read_pod<std::uint64_t>(is);
    std::vector<std::string> names;
    names.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) names.push_back(read_string(is));
    return names;
}

}  // namespace detail

inline void save_model(const Model& m, std::ostream& os) {
    os.write(kModelMagic, sizeof(kModelMagic));
    detail::write_pod<std::uint8_t>(os, m.nt_mode ? 1 : 0);
    detail::write_pod<std::int32_t>(os, m.B);
    detail::write_pod<std::int32_t>(os, m.K);
    detail::write_pod<std::int64_t>(os, m.n_users);
    detail::write_pod<std::int64_t>(os, m.n_items);
    detail::write_pod<double>(os, m.alpha);
    detail::write_pod<double>(os, m.beta);
    detail::write_doubles(os, m.pi);
    detail::write_doubles(os, m.phi);
    detail::write_doubles(os, m.env_weight);
    detail::write_pod<std::uint64_t>(os, m.env_times.size());
    for (const auto& t : m.env_times) detail::write_doubles(os, t);
    detail::write_names(os, m.user_names);
    detail::write_names(os, m.item_names);
    if (!os) throw data_error("save_model: write failed");
}

inline Model load_model(std::istream& is) {
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kModelMagic, sizeof(magic)) != 0)
        throw data_error("load_model: bad magic or unsupported version");
    Model m;
    m.nt_mode = detail::read_pod<std::uint8_t>(is) != 0;
    m.B = detail::read_pod<std::int32_t>(is);
    m.K = detail::read_pod<std::int32_t>(is);
    m.n_users = detail::read_pod<std::int64_t>(is);
    m.n_items = detail::read_pod<std::int64_t>(is);
    m.alpha = detail::read_pod<double>(is);
    m.beta = detail::read_pod<double>(is);
    m.pi = detail::read_doubles(is);
    m.phi = detail::read_doubles(is);
    m.env_weight = detail::read_doubles(is);
    const auto n_envs = detail::read_pod<std::uint64_t>(is);
    m.env_times.resize(n_envs);
    for (auto& t : m.env_times) t = detail::read_doubles(is);
    m.user_names = detail::read_names(is);
    m.item_names = detail::read_names(is);

    if (m.K < 1 || m.B < 1 || m.n_users < 0 || m.n_items < 0)
        throw data_error("load_model: invalid header");
    if (m.pi.size() != static_cast<std::size_t>(m.n_users) * m.K ||
        m.phi.size() != static_cast<std::size_t>(m.n_items) * m.K ||
        m.env_weight.size() != static_cast<std::size_t>(m.K) ||
        m.env_times.size() != static_cast<std::size_t>(m.K) ||
        m.user_names.size() != static_cast<std::size_t>(m.n_users) ||
        m.item_names.size() != static_cast<std::size_t>(m.n_items))
        throw data_error("load_model: inconsistent matrix shapes");
    return m;
}

/// Human-readable dump of the model file contents (debug aid).
inline void export_model_json(const Model& m, std::ostream& os) {
    nlohmann::json j;
    j["format"] = std::string(kModelMagic, sizeof(kModelMagic));
    j["nt_mode"] = m.nt_mode;
    j["B"] = m.B;
    j["K"] = m.K;
    j["n_users"] = m.n_users;
    j["n_items"] = m.n_items;
    j["alpha"] = m.alpha;
    j["beta"] = m.beta;
    j["env_weight"] = m.env_weight;
    j["pi"] = m.pi;
    j["phi"] = m.phi;
    j["env_times"] = m.env_times;
    j["user_names"] = m.user_names;
    j["item_names"] = m.item_names;
    os << j.dump(2) << '\n';
}

}  // namespace tribeflow
