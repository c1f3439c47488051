from abc import ABC, abstractmethod
from typing import AsyncIterable, Iterable, Optional

from src.app.entities import SerialProcess
from src.app.syntax import Spec


class BaseRepository[Obj, ID](ABC):
    """
    Abstract base class for repositories of domain objects kept outside the process.

    Type Parameters:
        Obj: Type of the domain object.
        ID: Type of the object identifier (e.g., a path).

    """

    @abstractmethod
    async def get(self, id_obj: ID) -> Obj:
        """
        Retrieve an object by its identifier.

        Args:
            id_obj (ID): The identifier of the object.

        Returns:
            Obj: The object.

        Raises:
            ObjectDoesNotExists: If nothing is stored under the identifier.

        """

    @abstractmethod
    async def get_all(self, ids: Iterable[ID]) -> AsyncIterable[Obj]:
        """
        Retrieve several objects, in the order of their identifiers.

        Args:
            ids (Iterable[ID]): The identifiers to load.

        Returns:
            AsyncIterable[Obj]: An asynchronous iterable of the objects.

        """

    @abstractmethod
    async def save(self, id_obj: ID, obj: Obj, overwrite: bool = True) -> None:
        """
        Store an object under an identifier.

        Args:
            id_obj (ID): Where to store the object.
            obj (Obj): The object to store.
            overwrite (bool): Whether an existing object may be replaced.

        Raises:
            ObjectAlreadyExists: If the identifier is taken and overwriting is not allowed.

        """


class BaseSpecRepository(BaseRepository[Spec, str], ABC):
    """
    Repository of parsed specifications, with includes resolved
    relative to the including file.
    """

    @abstractmethod
    def read_source(self, path: str, including: Optional[str] = None) -> tuple[str, str]:
        """
        Read the text of a specification file.

        Args:
            path (str): The path as written in the script or on the command line.
            including (str, optional): The file containing the include, if any.

        Returns:
            tuple[str, str]: The text and the resolved path.

        """


class BaseSerialTableRepository(BaseRepository[SerialProcess, str], ABC):
    """Repository of serialized process tables."""


class BaseTextToDomainMapper[Raw, DomainObj](ABC):
    """
    Abstract base class for mappers that convert between stored text and domain objects.

    Type Parameters:
        Raw: The stored representation (e.g., a table as text).
        DomainObj: The domain object class.

    """

    @abstractmethod
    def to_domain(self, data_obj: Raw) -> DomainObj:
        """
        Convert a stored representation to a domain object.

        Args:
            data_obj (Raw): The stored representation.

        Returns:
            DomainObj: The resulting domain object.

        """

    @abstractmethod
    def from_domain(self, domain_obj: DomainObj) -> Raw:
        """
        Convert a domain object to its stored representation.

        Args:
            domain_obj (DomainObj): The domain object to convert.

        Returns:
            Raw: The resulting stored representation.

        """
