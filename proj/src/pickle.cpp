#include "optcwm/pickle.hpp"

#include <cstring>
#include <fstream>

namespace optcwm::pickle {

std::int64_t NdArray::elem_size() const {
    if (dtype.size() == 2) return dtype[1] - '0';
    if (dtype.size() == 3 && dtype[1] == '1' && dtype[2] == '6') return 16;
    throw DataError("pickle: unsupported dtype " + dtype);
}

std::int64_t NdArray::num_elements() const {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::int64_t NdArray::flat_index(std::initializer_list<std::int64_t> idx) const {
    if (idx.size() != shape.size()) throw DataError("pickle: ndarray index rank mismatch");
    std::int64_t flat = 0;
    std::size_t k = 0;
    for (auto v : idx) {
        if (v < 0 || v >= shape[k]) throw DataError("pickle: ndarray index out of range");
        flat = flat * shape[k] + v;
        ++k;
    }
    return flat;
}

double NdArray::f64_at(std::initializer_list<std::int64_t> idx) const {
    std::int64_t flat = flat_index(idx);
    const std::uint8_t* p = data.data() + flat * elem_size();
    if (dtype == "f8") {
        double v;
        std::memcpy(&v, p, 8);
        return v;
    }
    if (dtype == "f4") {
        float v;
        std::memcpy(&v, p, 4);
        return v;
    }
    if (dtype == "i8") {
        std::int64_t v;
        std::memcpy(&v, p, 8);
        return static_cast<double>(v);
    }
    if (dtype == "i4") {
        std::int32_t v;
        std::memcpy(&v, p, 4);
        return v;
    }
    if (dtype == "u1" || dtype == "b1") return *p;
    throw DataError("pickle: cannot read dtype " + dtype + " as double");
}

std::uint8_t NdArray::u8_at(std::initializer_list<std::int64_t> idx) const {
    if (dtype != "u1" && dtype != "b1") throw DataError("pickle: dtype is not u1: " + dtype);
    return data[static_cast<std::size_t>(flat_index(idx))];
}

bool NdArray::bool_at(std::initializer_list<std::int64_t> idx) const {
    if (dtype == "b1" || dtype == "u1") return data[static_cast<std::size_t>(flat_index(idx))] != 0;
    return f64_at(idx) != 0.0;
}

const NdArray& Value::as_array() const {
    if (kind != Kind::Array) throw DataError("pickle: value is not an ndarray");
    return array;
}
std::int64_t Value::as_int() const {
    if (kind == Kind::Int) return i;
    if (kind == Kind::Bool) return b ? 1 : 0;
    throw DataError("pickle: value is not an int");
}
double Value::as_double() const {
    if (kind == Kind::Float) return f;
    if (kind == Kind::Int) return static_cast<double>(i);
    throw DataError("pickle: value is not a float");
}
bool Value::as_bool() const {
    if (kind == Kind::Bool) return b;
    if (kind == Kind::Int) return i != 0;
    throw DataError("pickle: value is not a bool");
}
const std::string& Value::as_str() const {
    if (kind != Kind::Str) throw DataError("pickle: value is not a string");
    return s;
}

std::vector<std::pair<std::string, const Value*>> Value::dict_entries() const {
    if (kind != Kind::Dict) throw DataError("pickle: value is not a dict");
    std::vector<std::pair<std::string, const Value*>> out;
    out.reserve(dict.size());
    for (const auto& [k, v] : dict) out.emplace_back(k.as_str(), &v);
    return out;
}

const Value& Value::require(const std::string& key) const {
    if (kind != Kind::Dict) throw DataError("pickle: value is not a dict");
    for (const auto& [k, v] : dict)
        if (k.kind == Kind::Str && k.s == key) return v;
    throw DataError("pickle: missing field '" + key + "'");
}

namespace {

class Reader {
public:
    Reader(const std::uint8_t* data, std::size_t len) : p_(data), end_(data + len) {}

    Value run() {
        for (;;) {
            std::uint8_t op = u8();
            switch (op) {
                case 0x80: u8(); break;                      // PROTO
                case 0x95: skip(8); break;                   // FRAME
                case '.': return pop();                      // STOP
                case '}': push(make(Value::Kind::Dict)); break;
                case ']': push(make(Value::Kind::List)); break;
                case ')': push(make(Value::Kind::Tuple)); break;
                case '(': marks_.push_back(stack_.size()); break;
                case 'q': memo_put(u8()); break;             // BINPUT
                case 'r': memo_put(u32()); break;            // LONG_BINPUT
                case 0x94: memo_put(memo_.size()); break;    // MEMOIZE
                case 'h': push(memo_get(u8())); break;       // BINGET
                case 'j': push(memo_get(u32())); break;      // LONG_BINGET
                case 'N': push(make(Value::Kind::None)); break;
                case 0x88: push(make_bool(true)); break;
                case 0x89: push(make_bool(false)); break;
                case 'K': push(make_int(u8())); break;       // BININT1
                case 'M': push(make_int(u16())); break;      // BININT2
                case 'J': push(make_int(static_cast<std::int32_t>(u32()))); break;
                case 0x8a: push(make_int(long1())); break;   // LONG1
                case 'G': push(make_float(binfloat())); break;
                case 'X': push(make_str(str(u32()))); break;           // BINUNICODE
                case 0x8c: push(make_str(str(u8()))); break;           // SHORT_BINUNICODE
                case 0x8d: push(make_str(str(u64()))); break;          // BINUNICODE8
                case 'U': push(make_str(str(u8()))); break;            // SHORT_BINSTRING
                case 'T': push(make_str(str(u32()))); break;           // BINSTRING
                case 'B': push(make_bytes(u32())); break;              // BINBYTES
                case 'C': push(make_bytes(u8())); break;               // SHORT_BINBYTES
                case 0x8e: push(make_bytes(u64())); break;             // BINBYTES8
                case 0x85: tuple_n(1); break;
                case 0x86: tuple_n(2); break;
                case 0x87: tuple_n(3); break;
                case 't': tuple_mark(); break;
                case 'a': append(); break;
                case 'e': appends(); break;
                case 's': setitem(); break;
                case 'u': setitems(); break;
                case 'c': push(global(line(), line())); break;         // GLOBAL
                case 0x93: stack_global(); break;                      // STACK_GLOBAL
                case 'R': reduce(); break;
                case 'b': build(); break;
                case 0x81: newobj(); break;                            // NEWOBJ
                case '0': pop(); break;                                // POP
                default:
                    throw DataError("pickle: unsupported opcode 0x" + hex(op));
            }
        }
    }

private:
    const std::uint8_t* p_;
    const std::uint8_t* end_;
    std::vector<Value> stack_;
    std::vector<std::size_t> marks_;
    std::vector<Value> memo_;

    static std::string hex(std::uint8_t v) {
        const char* d = "0123456789abcdef";
        return std::string{d[v >> 4], d[v & 15]};
    }

    void need(std::size_t n) {
        if (static_cast<std::size_t>(end_ - p_) < n) throw DataError("pickle: truncated stream");
    }
    std::uint8_t u8() {
        need(1);
        return *p_++;
    }
    std::uint16_t u16() {
        need(2);
        std::uint16_t v;
        std::memcpy(&v, p_, 2);
        p_ += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v;
        std::memcpy(&v, p_, 4);
        p_ += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v;
        std::memcpy(&v, p_, 8);
        p_ += 8;
        return v;
    }
    void skip(std::size_t n) {
        need(n);
        p_ += n;
    }
    std::string str(std::uint64_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(p_), n);
        p_ += n;
        return s;
    }
    std::string line() {
        std::string s;
        for (;;) {
            char c = static_cast<char>(u8());
            if (c == '\n') return s;
            s.push_back(c);
        }
    }
    std::int64_t long1() {
        std::uint8_t n = u8();
        if (n == 0) return 0;
        if (n > 8) throw DataError("pickle: LONG1 wider than 8 bytes");
        need(n);
        std::int64_t v = 0;
        std::memcpy(&v, p_, n);
        // sign-extend
        if (p_[n - 1] & 0x80)
            for (std::size_t k = n; k < 8; ++k) v |= (std::int64_t(0xff) << (8 * k));
        p_ += n;
        return v;
    }
    double binfloat() {  // big-endian
        need(8);
        std::uint64_t raw = 0;
        for (int k = 0; k < 8; ++k) raw = (raw << 8) | p_[k];
        p_ += 8;
        double v;
        std::memcpy(&v, &raw, 8);
        return v;
    }

    static Value make(Value::Kind k) {
        Value v;
        v.kind = k;
        return v;
    }
    static Value make_bool(bool b) {
        Value v = make(Value::Kind::Bool);
        v.b = b;
        return v;
    }
    static Value make_int(std::int64_t i) {
        Value v = make(Value::Kind::Int);
        v.i = i;
        return v;
    }
    static Value make_float(double f) {
        Value v = make(Value::Kind::Float);
        v.f = f;
        return v;
    }
    static Value make_str(std::string s) {
        Value v = make(Value::Kind::Str);
        v.s = std::move(s);
        return v;
    }
    Value make_bytes(std::uint64_t n) {
        need(n);
        Value v = make(Value::Kind::Bytes);
        v.bytes.assign(p_, p_ + n);
        p_ += n;
        return v;
    }
    static Value global(std::string mod, std::string name) {
        Value v = make(Value::Kind::Global);
        v.s = mod + "." + name;
        return v;
    }

    void push(Value v) { stack_.push_back(std::move(v)); }
    Value pop() {
        if (stack_.empty()) throw DataError("pickle: stack underflow");
        Value v = std::move(stack_.back());
        stack_.pop_back();
        return v;
    }
    Value& top() {
        if (stack_.empty()) throw DataError("pickle: stack underflow");
        return stack_.back();
    }
    void memo_put(std::size_t key) {
        if (memo_.size() <= key) memo_.resize(key + 1);
        memo_[key] = top();
    }
    Value memo_get(std::size_t key) {
        if (key >= memo_.size()) throw DataError("pickle: memo miss");
        return memo_[key];
    }
    std::size_t pop_mark() {
        if (marks_.empty()) throw DataError("pickle: no mark");
        std::size_t m = marks_.back();
        marks_.pop_back();
        return m;
    }

    void tuple_n(int n) {
        Value t = make(Value::Kind::Tuple);
        t.items.resize(static_cast<std::size_t>(n));
        for (int k = n - 1; k >= 0; --k) t.items[static_cast<std::size_t>(k)] = pop();
        push(std::move(t));
    }
    void tuple_mark() {
        std::size_t m = pop_mark();
        Value t = make(Value::Kind::Tuple);
        t.items.assign(std::make_move_iterator(stack_.begin() + static_cast<std::ptrdiff_t>(m)),
                       std::make_move_iterator(stack_.end()));
        stack_.resize(m);
        push(std::move(t));
    }
    void append() {
        Value v = pop();
        if (top().kind != Value::Kind::List) throw DataError("pickle: APPEND on non-list");
        top().items.push_back(std::move(v));
    }
    void appends() {
        std::size_t m = pop_mark();
        if (m == 0 || stack_[m - 1].kind != Value::Kind::List)
            throw DataError("pickle: APPENDS on non-list");
        for (std::size_t k = m; k < stack_.size(); ++k)
            stack_[m - 1].items.push_back(std::move(stack_[k]));
        stack_.resize(m);
    }
    void setitem() {
        Value v = pop();
        Value k = pop();
        if (top().kind != Value::Kind::Dict) throw DataError("pickle: SETITEM on non-dict");
        top().dict.emplace_back(std::move(k), std::move(v));
    }
    void setitems() {
        std::size_t m = pop_mark();
        if (m == 0 || stack_[m - 1].kind != Value::Kind::Dict)
            throw DataError("pickle: SETITEMS on non-dict");
        if ((stack_.size() - m) % 2 != 0) throw DataError("pickle: odd SETITEMS payload");
        for (std::size_t k = m; k + 1 < stack_.size() + 1 && k < stack_.size(); k += 2)
            stack_[m - 1].dict.emplace_back(std::move(stack_[k]), std::move(stack_[k + 1]));
        stack_.resize(m);
    }
    void stack_global() {
        Value name = pop();
        Value mod = pop();
        push(global(mod.as_str(), name.as_str()));
    }

    static bool global_is(const Value& g, const char* suffix) {
        if (g.kind != Value::Kind::Global) return false;
        const std::string& s = g.s;
        std::string suf(suffix);
        return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
    }

    void reduce() {
        Value args = pop();
        Value fn = pop();
        if (global_is(fn, "._reconstruct")) {
            // numpy array placeholder; BUILD supplies the real state
            push(make(Value::Kind::Array));
            return;
        }
        if (global_is(fn, ".dtype")) {
            if (args.items.empty()) throw DataError("pickle: dtype reduce without args");
            Value v = make(Value::Kind::Dtype);
            v.s = args.items[0].as_str();
            push(std::move(v));
            return;
        }
        if (global_is(fn, ".scalar")) throw DataError("pickle: numpy scalars unsupported");
        if (global_is(fn, ".encode")) {
            // _codecs.encode(str, 'latin1') — protocol 2 bytes fallback
            if (args.items.size() != 2) throw DataError("pickle: bad encode args");
            Value v = make(Value::Kind::Bytes);
            for (char c : args.items[0].as_str())
                v.bytes.push_back(static_cast<std::uint8_t>(c));
            push(std::move(v));
            return;
        }
        throw DataError("pickle: refusing to construct " +
                        (fn.kind == Value::Kind::Global ? fn.s : std::string("<non-global>")));
    }

    void newobj() {
        Value args = pop();
        Value cls = pop();
        (void)args;
        if (global_is(cls, ".ndarray")) {
            push(make(Value::Kind::Array));
            return;
        }
        throw DataError("pickle: refusing NEWOBJ for " +
                        (cls.kind == Value::Kind::Global ? cls.s : std::string("<non-global>")));
    }

    void build() {
        Value state = pop();
        Value& target = top();
        if (target.kind == Value::Kind::Array) {
            if (state.kind != Value::Kind::Tuple || state.items.size() < 5)
                throw DataError("pickle: bad ndarray state");
            const Value& shape = state.items[1];
            const Value& dt = state.items[2];
            const Value& fortran = state.items[3];
            const Value& data = state.items[4];
            if (fortran.as_bool()) throw DataError("pickle: fortran-order arrays unsupported");
            target.array.shape.clear();
            for (const auto& d : shape.items) target.array.shape.push_back(d.as_int());
            if (dt.kind != Value::Kind::Dtype) throw DataError("pickle: ndarray state without dtype");
            target.array.dtype = dt.s;
            target.array.byteorder = dt.bytes.empty() ? '<' : static_cast<char>(dt.bytes[0]);
            if (data.kind != Value::Kind::Bytes)
                throw DataError("pickle: ndarray data must be bytes");
            target.array.data = data.bytes;
            std::int64_t expect = target.array.num_elements() * target.array.elem_size();
            if (expect != static_cast<std::int64_t>(target.array.data.size()))
                throw DataError("pickle: ndarray payload size mismatch");
            return;
        }
        if (target.kind == Value::Kind::Dtype) {
            // state = (ver, byteorder, subdescr, names, fields, elsize, alignment, flags)
            if (state.kind == Value::Kind::Tuple && state.items.size() >= 2 &&
                state.items[1].kind == Value::Kind::Str && !state.items[1].s.empty()) {
                char bo = state.items[1].s[0];
                if (bo == '>') throw DataError("pickle: big-endian arrays unsupported");
                target.bytes.assign(1, static_cast<std::uint8_t>(bo));
            }
            return;
        }
        throw DataError("pickle: BUILD on unsupported object");
    }
};

}  // namespace

Value loads(const std::uint8_t* data, std::size_t len) { return Reader(data, len).run(); }

Value load_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("pickle: cannot open " + path);
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return loads(buf.data(), buf.size());
}

}  // namespace optcwm::pickle
