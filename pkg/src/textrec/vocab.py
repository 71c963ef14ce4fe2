"""Character/id table with reserved control tokens."""

from .errors import ConfigError

PAD_ID = 0
START_ID = 1
END_ID = 2
RESERVED = 3


class Vocabulary:
    """Bijective char<->id map; ids 0/1/2 are PAD/START/END, chars from 3."""

    def __init__(self, charset):
        charset = str(charset)
        if not charset:
            raise ConfigError("charset must not be empty")
        if len(set(charset)) != len(charset):
            raise ConfigError("charset contains duplicate characters")
        self.charset = charset
        self._to_id = {c: RESERVED + i for i, c in enumerate(charset)}
        self._to_char = {i: c for c, i in self._to_id.items()}

    @property
    def size(self):
        return RESERVED + len(self.charset)

    def encode(self, text):
        try:
            return [self._to_id[c] for c in text]
        except KeyError as exc:
            raise ConfigError(f"character {exc.args[0]!r} not in charset") from None

    def decode(self, ids):
        """Drop control tokens; an END id terminates the text."""
        chars = []
        for i in ids:
            if i == END_ID:
                break
            if i in (PAD_ID, START_ID):
                continue
            chars.append(self._to_char[int(i)])
        return "".join(chars)

    def __contains__(self, char):
        return char in self._to_id
