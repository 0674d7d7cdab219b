#pragma once

#include <initializer_list>
#include <string>

#include <json.hpp>

#include "comanip/errors.hpp"
#include "comanip/rotmath.hpp"
#include "comanip/types.hpp"

namespace comanip::detail {

inline nlohmann::json to_json_array(const Eigen::Ref<const VecX>& v)
{
    nlohmann::json a = nlohmann::json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

inline VecX vecx_from(const nlohmann::json& j, Eigen::Index n, const std::string& what)
{
    if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != n) {
        throw ConfigError(what + ": expected " + std::to_string(n) + " numbers");
    }
    VecX v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = j[static_cast<std::size_t>(i)].get<double>();
    return v;
}

inline Vec3 vec3_from(const nlohmann::json& j, const std::string& what) { return vecx_from(j, 3, what); }

inline Pose pose_from(const nlohmann::json& j, const std::string& what)
{
    Pose p;
    p.p = vec3_from(j.at("xyz"), what + ".xyz");
    const Vec3 rpy = j.contains("rpy") ? vec3_from(j.at("rpy"), what + ".rpy") : Vec3::Zero();
    p.q = UnitQuaternion::from_rpy(rpy.x(), rpy.y(), rpy.z());
    return p;
}

inline nlohmann::json pose_to_json(const Pose& p)
{
    return {{"xyz", to_json_array(p.p)}, {"rpy", to_json_array(p.q.to_rpy())}};
}

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const std::string& what)
{
    if (!j.is_object()) throw ConfigError(what + ": expected an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool found = false;
        for (const char* k : known) found = found || it.key() == k;
        if (!found) throw ConfigError(what + ": unknown key '" + it.key() + "'");
    }
}

}  // namespace comanip::detail
