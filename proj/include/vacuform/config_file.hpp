#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "vacuform/error.hpp"

namespace vacuform {

/// `key = value` config with `[section]` headers. Nested sections are written
/// with dotted names, e.g. `[train.lr_schedule]`; lookups take the section
/// name and the key separately. Format reference: docs/config.md.
class ConfigFile {
 public:
  ConfigFile() = default;

  static ConfigFile load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::configuration, "cannot read config file " + path.string(), "--config");
    return parse(in, path.string());
  }

  static ConfigFile parse_string(const std::string& text) {
    std::istringstream in(text);
    return parse(in, "<string>");
  }

  bool has_section(const std::string& section) const {
    return tree_.find(section) != tree_.not_found();
  }

  bool has(const std::string& section, const std::string& key) const {
    return raw(section, key).has_value();
  }

  std::optional<std::string> raw(const std::string& section, const std::string& key) const {
    auto sec = tree_.find(section);
    if (sec == tree_.not_found()) return std::nullopt;
    auto it = sec->second.find(key);
    if (it == sec->second.not_found()) return std::nullopt;
    return it->second.data();
  }

  template <typename T>
  T get(const std::string& section, const std::string& key, const T& fallback) const {
    auto v = raw(section, key);
    if (!v) return fallback;
    return convert<T>(*v, section + "." + key);
  }

  template <typename T>
  T get_required(const std::string& section, const std::string& key) const {
    auto v = raw(section, key);
    if (!v) fail(ErrorCode::configuration, "missing config key " + section + "." + key, section + "." + key);
    return convert<T>(*v, section + "." + key);
  }

  void set(const std::string& section, const std::string& key, const std::string& value) {
    auto sec = tree_.find(section);
    if (sec == tree_.not_found()) {
      tree_.push_back({section, boost::property_tree::ptree{}});
      sec = tree_.find(section);
    }
    sec->second.put_child(boost::property_tree::ptree::path_type(key, '\0'),
                          boost::property_tree::ptree(value));
  }

 private:
  static ConfigFile parse(std::istream& in, const std::string& origin) {
    ConfigFile cfg;
    try {
      boost::property_tree::ini_parser::read_ini(in, cfg.tree_);
    } catch (const boost::property_tree::ini_parser_error& e) {
      fail(ErrorCode::configuration, "malformed config " + origin + ": " + e.message(), "--config");
    }
    return cfg;
  }

  template <typename T>
  static T convert(const std::string& text, const std::string& field) {
    if constexpr (std::is_same_v<T, std::string>) {
      return text;
    } else if constexpr (std::is_same_v<T, bool>) {
      if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
      if (text == "false" || text == "0" || text == "no" || text == "off") return false;
      fail(ErrorCode::configuration, "expected boolean for " + field + ", got '" + text + "'", field);
    } else {
      std::istringstream s(text);
      T value{};
      s >> value;
      if (s.fail() || !(s >> std::ws).eof())
        fail(ErrorCode::configuration, "cannot parse " + field + " = '" + text + "'", field);
      return value;
    }
  }

  boost::property_tree::ptree tree_;
};

}  // namespace vacuform
