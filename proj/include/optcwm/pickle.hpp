#pragma once

// Constrained unpickler: enough of pickle protocols 2-5 to read TAP-Vid style
// files (nested dict/list/tuple of scalars, strings and numpy ndarrays).
// Arbitrary object construction is rejected by name.

#include <cstdint>
#include <initializer_list>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "optcwm/common.hpp"

namespace optcwm::pickle {

struct NdArray {
    std::vector<std::int64_t> shape;
    std::string dtype;      // numpy code without byte order: u1, b1, i4, i8, f4, f8
    char byteorder = '<';   // '<' or '|'
    std::vector<std::uint8_t> data;

    std::int64_t elem_size() const;
    std::int64_t num_elements() const;
    std::int64_t flat_index(std::initializer_list<std::int64_t> idx) const;

    double f64_at(std::initializer_list<std::int64_t> idx) const;
    std::uint8_t u8_at(std::initializer_list<std::int64_t> idx) const;
    bool bool_at(std::initializer_list<std::int64_t> idx) const;
};

struct Value {
    enum class Kind { None, Bool, Int, Float, Str, Bytes, List, Tuple, Dict, Global, Array, Dtype };
    Kind kind = Kind::None;

    bool b = false;
    std::int64_t i = 0;
    double f = 0.0;
    std::string s;                           // Str; for Global: "module.name"
    std::vector<std::uint8_t> bytes;
    std::vector<Value> items;                // List / Tuple
    std::vector<std::pair<Value, Value>> dict;
    NdArray array;

    bool is(Kind k) const { return kind == k; }
    const NdArray& as_array() const;
    std::int64_t as_int() const;
    double as_double() const;
    bool as_bool() const;
    const std::string& as_str() const;

    // dict helpers (string keys, insertion order preserved)
    std::vector<std::pair<std::string, const Value*>> dict_entries() const;
    const Value& require(const std::string& key) const;
};

Value loads(const std::uint8_t* data, std::size_t len);
Value load_file(const std::string& path);

}  // namespace optcwm::pickle
