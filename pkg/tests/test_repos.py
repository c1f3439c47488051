import pytest

from src.app.services.io_process_service import serialize
from src.infrastructure.repos import FileSpecRepository, SerialTableMapper, SerialTableRepository
from src.infrastructure.repos.exceptions import MalformedTable, ObjectAlreadyExists, ObjectDoesNotExists
from src.infrastructure.repos.file_repos.spec_repo import write_file
from tests.conftest import IO_HEADER
from tests.test_io_process import T_TABLE

# Configure pytest for asyncio
pytest_plugins = ("pytest_asyncio",)


# ========== Fixtures ==========


@pytest.fixture
def mapper(t_spec):
    """Table mapper over the T family events"""
    return SerialTableMapper(t_spec.catalogue)


@pytest.fixture
def t_table(t_models, t_spec):
    """Serialized T"""
    return serialize(t_models.norm(t_spec.process("T")))


@pytest.fixture
def spec_files(tmp_path):
    """A script including a sibling file by a relative path"""
    (tmp_path / "types.iop").write_text(IO_HEADER)
    main = tmp_path / "main.iop"
    main.write_text('include "types.iop"\nP = c.in.v.1 -> c.out.v.1 -> P\nassert P :[io process]\n')
    return main


# ========== Mapper Tests ==========


class TestSerialTableMapper:
    """Tests for the table mapper"""

    def test_from_domain(self, mapper, t_table):
        """Test the table prints with its depth header"""
        text = mapper.from_domain(t_table)

        assert text.splitlines() == ["# depth 2", *T_TABLE]

    def test_to_domain(self, mapper, t_table):
        """Test a printed table reads back row by row"""
        restored = mapper.to_domain(mapper.from_domain(t_table))

        assert restored.entries == t_table.entries
        assert restored.source_depth == 2

    def test_comments_and_blank_lines(self, mapper):
        """Test comment lines and blank lines are skipped"""
        restored = mapper.to_domain("# a note\n\n(start, <c.in.v.1>, 0)\n")

        assert [str(e) for e in restored.entries] == ["(start, <c.in.v.1>, 0)"]
        assert restored.source_depth == 0

    def test_malformed_row(self, mapper):
        """Test a row outside the three-column shape"""
        with pytest.raises(MalformedTable) as exc_info:
            mapper.to_domain("(start, <c.in.v.1>)\n")

        assert exc_info.value.message.startswith("line 1:")

    def test_unknown_event(self, mapper):
        """Test a row naming an undeclared event"""
        with pytest.raises(MalformedTable) as exc_info:
            mapper.to_domain("(start, <c.in.v.1>, 0)\n(c.in.v.9, <>, 1)\n")

        assert "unknown event c.in.v.9" in exc_info.value.message
        assert exc_info.value.code == "E_IO"


# ========== Spec Repository Tests ==========


class TestFileSpecRepository:
    """Tests for the script repository"""

    def test_read_source_relative_to_including(self, spec_files):
        """Test includes resolve next to the including file"""
        text, source = FileSpecRepository().read_source("types.iop", str(spec_files))

        assert "channel c" in text
        assert source == str(spec_files.parent / "types.iop")

    @pytest.mark.asyncio
    async def test_get(self, spec_files):
        """Test a script is parsed together with its includes"""
        spec = await FileSpecRepository().get(str(spec_files))

        assert "c" in spec.channels
        assert "P" in spec.processes
        assert len(spec.assertions) == 1

    @pytest.mark.asyncio
    async def test_get_missing(self, tmp_path):
        """Test a missing file"""
        with pytest.raises(ObjectDoesNotExists):
            await FileSpecRepository().get(str(tmp_path / "nowhere.iop"))

    @pytest.mark.asyncio
    async def test_missing_include(self, tmp_path):
        """Test an include pointing nowhere"""
        main = tmp_path / "main.iop"
        main.write_text('include "gone.iop"\n')

        with pytest.raises(ObjectDoesNotExists):
            await FileSpecRepository().get(str(main))

    @pytest.mark.asyncio
    async def test_get_all_keeps_order(self, spec_files, corpus_dir):
        """Test several scripts come back in the order asked"""
        paths = [str(corpus_dir / "t_family.iop"), str(spec_files)]

        specs = [spec async for spec in FileSpecRepository().get_all(paths)]

        assert [s.source for s in specs] == paths

    @pytest.mark.asyncio
    async def test_save_and_reload(self, spec_files, tmp_path):
        """Test a saved script parses back to the same processes"""
        repo = FileSpecRepository()
        spec = await repo.get(str(spec_files))
        target = tmp_path / "printed.iop"

        await repo.save(str(target), spec)

        assert (await repo.get(str(target))).processes == spec.processes


# ========== Table Repository Tests ==========


class TestSerialTableRepository:
    """Tests for the table repository"""

    @pytest.mark.asyncio
    async def test_save_and_get(self, mapper, t_table, tmp_path):
        """Test a saved table is read back"""
        repo = SerialTableRepository(mapper)
        target = str(tmp_path / "t.table")

        await repo.save(target, t_table)

        assert (await repo.get(target)).entries == t_table.entries

    @pytest.mark.asyncio
    async def test_no_overwrite(self, mapper, t_table, tmp_path):
        """Test saving over an existing file when asked not to"""
        repo = SerialTableRepository(mapper)
        target = tmp_path / "t.table"
        target.write_text("")

        with pytest.raises(ObjectAlreadyExists):
            await repo.save(str(target), t_table, overwrite=False)

    @pytest.mark.asyncio
    async def test_get_missing(self, mapper, tmp_path):
        """Test a missing table"""
        with pytest.raises(ObjectDoesNotExists):
            await SerialTableRepository(mapper).get(str(tmp_path / "none.table"))


class TestWriteFile:
    """Tests for write_file"""

    @pytest.mark.asyncio
    async def test_overwrite(self, tmp_path):
        """Test overwriting replaces the content"""
        target = tmp_path / "out.txt"
        target.write_text("old")

        await write_file(target, "new", True, "utf-8")

        assert target.read_text() == "new"

    @pytest.mark.asyncio
    async def test_missing_directory(self, tmp_path):
        """Test writing into a directory that does not exist"""
        with pytest.raises(ObjectDoesNotExists):
            await write_file(tmp_path / "no" / "out.txt", "text", True, "utf-8")
