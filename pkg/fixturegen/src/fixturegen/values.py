"""Seeded construction of the benign value corpus.

Everything here must be a pure function of the seed: the corpus is
regenerated in CI and compared hash-for-hash.
"""

import random
from collections import OrderedDict


def _shared_and_cyclic() -> list[tuple[str, object]]:
    """Structures exercising the memo: shared subtrees and true cycles."""
    out: list[tuple[str, object]] = []

    inner = [1, 2, 3]
    out.append(("shared_list_twice", [inner, inner]))

    pair = ("k", 7)
    out.append(("shared_tuple_in_lists", [[pair], [pair], pair]))

    d = {"a": 1}
    out.append(("shared_dict_diamond", {"left": d, "right": d}))

    cyc = [1, 2]
    cyc.append(cyc)
    out.append(("cyclic_list", cyc))

    sd: dict = {"name": "root"}
    sd["self"] = sd
    out.append(("cyclic_dict", sd))

    # a tuple participating in a cycle through a list
    lst: list = []
    tup = (lst, "tail")
    lst.append(tup)
    out.append(("cyclic_tuple_via_list", lst))

    deep: object = 0
    for i in range(50):
        deep = [deep, i]
    out.append(("deeply_nested_list", deep))

    return out


def _seeded_values(rng: random.Random) -> list[tuple[str, object]]:
    out: list[tuple[str, object]] = []
    for i in range(6):
        out.append(
            (
                f"random_mixed_{i}",
                {
                    "ints": [rng.randint(-(10**12), 10**12) for _ in range(8)],
                    "floats": [rng.uniform(-1e6, 1e6) for _ in range(6)],
                    "text": "".join(rng.choice("abcdefg hijé你") for _ in range(40)),
                    "blob": bytes(rng.randrange(256) for _ in range(rng.randint(0, 64))),
                    "nested": (rng.random(), [None, True, rng.randint(0, 9)]),
                },
            )
        )
    big = [rng.randint(0, 255) for _ in range(10_000)]
    out.append(("large_int_list", big))
    return out


def benign_values(seed: int) -> list[tuple[str, object]]:
    """The full (slug, value) corpus for pickle round-trip oracles."""
    rng = random.Random(seed)
    fixed: list[tuple[str, object]] = [
        ("none", None),
        ("bool_true", True),
        ("bool_false", False),
        ("int_zero", 0),
        ("int_small", 42),
        ("int_negative", -7),
        ("int_u8_edge", 255),
        ("int_u16_edge", 65535),
        ("int_i32_min", -(2**31)),
        ("int_i32_max", 2**31 - 1),
        ("int_big", 2**100),
        ("int_big_negative", -(2**77) - 3),
        ("float_simple", 1.5),
        ("float_neg_zero", -0.0),
        ("float_tiny", 5e-324),
        ("float_inf", float("inf")),
        ("float_nan", float("nan")),
        ("str_empty", ""),
        ("str_ascii", "hello world"),
        ("str_unicode", "café ☃ \U0001f40d"),
        ("str_long", "model-weights-" * 40),
        ("bytes_empty", b""),
        ("bytes_short", b"\x00\x01\xfe\xff"),
        ("bytes_long", bytes(range(256)) * 3),
        ("bytearray_val", bytearray(b"mutable bytes")),
        ("complex_val", complex(1.5, -2.25)),
        ("list_flat", [1, 2.0, "three", None, True]),
        ("list_empty", []),
        ("tuple_empty", ()),
        ("tuple_one", (9,)),
        ("tuple_three", (1, "2", 3.0)),
        ("tuple_nested", ((1, 2), (3, (4, 5)))),
        ("dict_str_keys", {"epoch": 3, "lr": 0.001, "tags": ["a", "b"]}),
        ("dict_mixed_keys", {1: "one", (2, 3): "pair", None: "none", "s": [1]}),
        # set members are ints/tuples only: their hashes are value-based,
        # so iteration order (hence pickle bytes) is hash-seed independent;
        # str members would make the corpus unreproducible across processes
        ("set_ints", {3, 1, 2}),
        ("frozenset_mixed", frozenset({4, 1, (2, 3)})),
        ("ordered_dict", OrderedDict([("w", [1.0, 2.0]), ("b", [0.5])])),
        ("empty_dict", {}),
        ("kitchen_sink", {"layers": [{"w": [0.1, 0.2], "meta": ("relu", None)}], "blob": b"\x80\x04", "ok": True}),
    ]
    return fixed + _shared_and_cyclic() + _seeded_values(rng)


# container specs: (slug, [(tensor name, dtype, shape)...]); values seeded separately
CONTAINER_DTYPES = ["f16", "f32", "f64", "i64", "bool"]


def container_specs(seed: int) -> list[tuple[str, list[tuple[str, str, tuple[int, ...]]]]]:
    rng = random.Random(seed + 1)
    specs: list[tuple[str, list[tuple[str, str, tuple[int, ...]]]]] = []
    specs.append(("single_f32", [("weight", "f32", (2, 2))]))
    specs.append(("scalar_f64", [("alpha", "f64", ())]))
    specs.append(
        (
            "one_per_dtype",
            [(f"t_{dt}", dt, (3, 5)) for dt in CONTAINER_DTYPES],
        )
    )
    for i in range(27):
        n_tensors = rng.randint(1, 16)
        tensors = []
        for j in range(n_tensors):
            dt = rng.choice(CONTAINER_DTYPES)
            ndim = rng.randint(0, 3)
            shape = tuple(rng.randint(1, 8) for _ in range(ndim))
            tensors.append((f"layer{j}.{rng.choice(['weight', 'bias', 'scale'])}", dt, shape))
        specs.append((f"random_{i:02d}", tensors))
    return specs
