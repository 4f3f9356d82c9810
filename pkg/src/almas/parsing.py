"""Pluggable structural parsers that find the definitions inside a source file."""

from __future__ import annotations

import ast
from dataclasses import dataclass, field
from pathlib import PurePosixPath
from typing import Protocol

# Files with these extensions are indexed; only some have a structural parser.
CODE_EXTENSIONS = frozenset(
    ".py .pyi .js .jsx .mjs .ts .tsx .java .kt .scala .go .rs .c .h .cc .cpp .hpp "
    ".cs .rb .php .swift .sh".split()
)


@dataclass
class Definition:
    kind: str  # "function" | "class" | "method"
    name: str
    start: int
    end: int
    children: list[Definition] = field(default_factory=list)


class StructuralParser(Protocol):
    extensions: tuple[str, ...]

    def parse(self, text: str) -> list[Definition]:
        """Top-level definitions in source order. Raises SyntaxError on bad input."""


class PythonParser:
    extensions = (".py", ".pyi")

    def parse(self, text: str) -> list[Definition]:
        tree = ast.parse(text)
        out = []
        for node in tree.body:
            if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)):
                out.append(Definition("function", node.name, _start(node), node.end_lineno))
            elif isinstance(node, ast.ClassDef):
                cls = Definition("class", node.name, _start(node), node.end_lineno)
                for sub in node.body:
                    if isinstance(sub, (ast.FunctionDef, ast.AsyncFunctionDef)):
                        cls.children.append(
                            Definition("method", sub.name, _start(sub), sub.end_lineno)
                        )
                out.append(cls)
        return out


def _start(node) -> int:
    return min([node.lineno] + [d.lineno for d in node.decorator_list])


class ParserRegistry:
    def __init__(self, parsers=()):
        self._by_ext: dict[str, StructuralParser] = {}
        for p in parsers:
            self.register(p)

    def register(self, parser: StructuralParser) -> None:
        for ext in parser.extensions:
            self._by_ext[ext] = parser

    def for_path(self, path: str) -> StructuralParser | None:
        return self._by_ext.get(PurePosixPath(path).suffix)


def default_registry() -> ParserRegistry:
    return ParserRegistry([PythonParser()])
