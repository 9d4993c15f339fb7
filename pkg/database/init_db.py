import asyncio
from .session import init_db, dispose_db

async def create_database():
    """Создаёт таблицы реестра запусков"""
    await init_db()
    await dispose_db()
    print("run registry is ready")

if __name__ == "__main__":
    asyncio.run(create_database())
